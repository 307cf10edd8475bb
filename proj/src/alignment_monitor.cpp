#include "usn/alignment_monitor.hpp"

#include <stdexcept>

namespace usn {

ShaftLengthMonitor::ShaftLengthMonitor(int capacity, double t_mis)
    : capacity_(capacity), t_mis_(t_mis), buffer_(static_cast<std::size_t>(capacity), 0.0) {
  if (capacity < 1) throw std::invalid_argument("ShaftLengthMonitor: capacity must be >= 1");
  if (t_mis <= 0.0 || t_mis >= 1.0) {
    throw std::invalid_argument("ShaftLengthMonitor: t_mis must be in (0, 1)");
  }
}

MonitorState ShaftLengthMonitor::push_and_check(double length_px, bool valid) {
  const double len = valid ? length_px : 0.0;
  const long frame = frame_counter_++;
  if (count_ == capacity_) {
    const double avg = sum_ / capacity_;
    if (avg > 0.0 && (avg - len) / avg > t_mis_) {
      state_ = MonitorState::kMisaligned;
      trigger_ = Trigger{frame, avg, len};
      return state_;  // triggering sample frozen out of the buffer
    }
    sum_ -= buffer_[head_];
  } else {
    ++count_;
  }
  buffer_[head_] = len;
  sum_ += len;
  head_ = (head_ + 1) % capacity_;
  state_ = count_ == capacity_ ? MonitorState::kTracking : MonitorState::kWarmup;
  return state_;
}

void ShaftLengthMonitor::reset() {
  head_ = 0;
  count_ = 0;
  sum_ = 0.0;
  frame_counter_ = 0;
  state_ = MonitorState::kWarmup;
  trigger_.reset();
}

}  // namespace usn
