// SPDX-License-Identifier: Apache-2.0
//
// Per-stream device-to-host clock models and alignment of frames from
// several streams into synchronized groups on the host timeline.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace ocular::sync {

using StreamId = int;

struct FrameMeta {
  StreamId stream_id = 0;
  std::uint32_t frame_index = 0;
  std::uint64_t device_ts_us = 0;
  std::int64_t host_ts_us = 0;
};

/// host = offset_us + skew * device (+ non-negative transport delay).
struct ClockModel {
  double offset_us = 0.0;
  double skew = 1.0;
  double fit_residual_us = 0.0;
  std::size_t sample_count = 0;
};

/// Two-pass fit: least squares on all samples, then on the samples whose
/// residual does not exceed the median. The offset is finally lowered onto
/// the fastest retained sample so that the line follows minimum delay.
/// Throws InputError for < 10 samples or < 5 s of device time and SyncError
/// when the skew leaves [0.999, 1.001].
ClockModel fit_clock_model(std::span<const FrameMeta> samples);

std::int64_t to_host_time(const ClockModel& model, std::uint64_t device_ts_us);
/// Inverse of to_host_time (rounded).
std::uint64_t to_device_time(const ClockModel& model, std::int64_t host_ts_us);

struct SyncedGroup {
  std::int64_t group_ts_us = 0;
  std::map<StreamId, std::uint32_t> members;  // stream -> frame index
  std::int64_t max_skew_us = 0;
};

struct StreamDrops {
  std::vector<std::int64_t> missing_group_ts;  // groups this stream has no member in
  double coverage = 0.0;                       // fraction of groups with a member
};

struct DropReport {
  std::map<StreamId, StreamDrops> streams;
};

struct Alignment {
  std::vector<SyncedGroup> groups;
  DropReport drops;
};

/// Greedy sweep over drift-corrected timestamps: a frame joins the open group
/// when it is within `tolerance_us` of the group's first member and its stream
/// is not yet in the group; otherwise it opens a new group. Throws InputError
/// for fewer than 2 streams, a missing clock model, or a tolerance above half
/// the nominal period.
Alignment align_streams(const std::map<StreamId, std::vector<FrameMeta>>& streams,
                        const std::map<StreamId, ClockModel>& models, std::int64_t nominal_period_us,
                        std::int64_t tolerance_us);

}  // namespace ocular::sync
