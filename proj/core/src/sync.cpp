// SPDX-License-Identifier: Apache-2.0
#include "ocular/sync.hpp"

#include "ocular/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>

namespace ocular::sync {

namespace {

struct Line {
  double offset = 0.0;
  double slope = 1.0;
};

// Least squares on centered coordinates; device times are ~1e7 us so the
// raw normal equations would lose most of their precision.
Line fit_line(std::span<const FrameMeta> s, const std::vector<std::size_t>& use) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i : use) {
    mx += static_cast<double>(s[i].device_ts_us);
    my += static_cast<double>(s[i].host_ts_us);
  }
  mx /= static_cast<double>(use.size());
  my /= static_cast<double>(use.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i : use) {
    const double dx = static_cast<double>(s[i].device_ts_us) - mx;
    const double dy = static_cast<double>(s[i].host_ts_us) - my;
    sxx += dx * dx;
    sxy += dx * dy;
  }
  const double slope = sxy / sxx;
  return Line{my - slope * mx, slope};
}

double residual(const Line& l, const FrameMeta& m) {
  return static_cast<double>(m.host_ts_us) - (l.offset + l.slope * static_cast<double>(m.device_ts_us));
}

}  // namespace

ClockModel fit_clock_model(std::span<const FrameMeta> samples) {
  if (samples.size() < 10) {
    throw InputError("clock fit needs at least 10 samples, got " + std::to_string(samples.size()));
  }
  auto [lo, hi] = std::minmax_element(samples.begin(), samples.end(), [](const FrameMeta& a, const FrameMeta& b) {
    return a.device_ts_us < b.device_ts_us;
  });
  if (hi->device_ts_us - lo->device_ts_us < 5'000'000) {
    throw InputError("clock fit needs samples spanning at least 5 s");
  }

  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Line first = fit_line(samples, all);

  std::vector<double> res(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) res[i] = residual(first, samples[i]);
  std::vector<double> sorted = res;
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  double median = *mid;
  if (sorted.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(sorted.begin(), mid));
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (res[i] <= median) kept.push_back(i);
  }
  if (kept.size() < 2) kept = all;
  const Line second = fit_line(samples, kept);

  double sq = 0.0, lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i : kept) {
    const double r = residual(second, samples[i]);
    sq += r * r;
    lowest = std::min(lowest, r);
  }

  ClockModel m;
  m.skew = second.slope;
  // Timestamps are whole microseconds, so residuals within one tick of the
  // line are rounding, not delay; only lower the line beyond that.
  m.offset_us = second.offset + std::min(0.0, lowest + 1.0);
  m.fit_residual_us = std::sqrt(sq / static_cast<double>(kept.size()));
  m.sample_count = samples.size();
  if (!(m.skew >= 0.999 && m.skew <= 1.001)) {
    throw SyncError("fitted clock skew " + std::to_string(m.skew) + " outside +-1000 ppm");
  }
  return m;
}

std::int64_t to_host_time(const ClockModel& model, std::uint64_t device_ts_us) {
  return std::llround(model.offset_us + model.skew * static_cast<double>(device_ts_us));
}

std::uint64_t to_device_time(const ClockModel& model, std::int64_t host_ts_us) {
  const double d = (static_cast<double>(host_ts_us) - model.offset_us) / model.skew;
  return d <= 0.0 ? 0 : static_cast<std::uint64_t>(std::llround(d));
}

Alignment align_streams(const std::map<StreamId, std::vector<FrameMeta>>& streams,
                        const std::map<StreamId, ClockModel>& models, std::int64_t nominal_period_us,
                        std::int64_t tolerance_us) {
  if (streams.size() < 2) throw InputError("alignment needs at least 2 streams");
  if (tolerance_us < 0 || 2 * tolerance_us > nominal_period_us) {
    throw InputError("alignment tolerance must be within half the nominal period");
  }

  struct Entry {
    std::int64_t ts;
    StreamId stream;
    std::uint32_t index;
  };
  std::vector<Entry> entries;
  for (const auto& [id, frames] : streams) {
    auto it = models.find(id);
    if (it == models.end()) throw InputError("no clock model for stream " + std::to_string(id));
    for (const FrameMeta& f : frames) entries.push_back({to_host_time(it->second, f.device_ts_us), id, f.frame_index});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.ts, a.stream, a.index) < std::tie(b.ts, b.stream, b.index);
  });

  Alignment out;
  std::int64_t latest = 0;
  for (const Entry& e : entries) {
    SyncedGroup* open = out.groups.empty() ? nullptr : &out.groups.back();
    if (open && e.ts - open->group_ts_us <= tolerance_us && !open->members.contains(e.stream)) {
      open->members[e.stream] = e.index;
      latest = e.ts;
      open->max_skew_us = latest - open->group_ts_us;
      continue;
    }
    SyncedGroup g;
    g.group_ts_us = e.ts;
    g.members[e.stream] = e.index;
    out.groups.push_back(std::move(g));
    latest = e.ts;
  }

  for (const auto& [id, frames] : streams) {
    StreamDrops& d = out.drops.streams[id];
    std::size_t present = 0;
    for (const SyncedGroup& g : out.groups) {
      if (g.members.contains(id)) {
        ++present;
      } else {
        d.missing_group_ts.push_back(g.group_ts_us);
      }
    }
    d.coverage = out.groups.empty() ? 0.0 : static_cast<double>(present) / static_cast<double>(out.groups.size());
  }
  return out;
}

}  // namespace ocular::sync
