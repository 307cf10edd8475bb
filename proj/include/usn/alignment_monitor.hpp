#pragma once

#include <optional>
#include <vector>

namespace usn {

enum class MonitorState { kWarmup, kTracking, kMisaligned };

/// Ring buffer of detected shaft lengths. A frame whose length drops below
/// (1 - t_mis) of the buffer average flags misalignment; the triggering sample
/// is not pushed, so the reference average stays at the pre-misalignment
/// state. Decrease-only: longer shafts never trigger. Single writer.
class ShaftLengthMonitor {
 public:
  explicit ShaftLengthMonitor(int capacity = 25, double t_mis = 0.40);

  /// Invalid detections contribute length 0.
  MonitorState push_and_check(double length_px, bool valid = true);
  void reset();

  MonitorState state() const { return state_; }
  int size() const { return count_; }
  int capacity() const { return capacity_; }
  double average() const { return count_ > 0 ? sum_ / count_ : 0.0; }

  struct Trigger {
    long frame_index = -1;
    double average_px = 0.0;
    double length_px = 0.0;
  };
  const std::optional<Trigger>& last_trigger() const { return trigger_; }

 private:
  int capacity_;
  double t_mis_;
  std::vector<double> buffer_;
  int head_ = 0;
  int count_ = 0;
  double sum_ = 0.0;
  long frame_counter_ = 0;
  MonitorState state_ = MonitorState::kWarmup;
  std::optional<Trigger> trigger_;
};

}  // namespace usn
