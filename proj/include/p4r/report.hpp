#pragma once

// Text and jsonl writers for metric reports, ROUGE reports and training history.

#include <iosfwd>
#include <span>
#include <string>

#include "p4r/metrics.hpp"
#include "p4r/train.hpp"

namespace p4r {

struct ReportContext {
  std::string split;  // "val" | "test"
  std::string mode;   // "p4r" | "wt" | "random"
};

// Header line then `metric<TAB>k<TAB>value` rows.
void write_report_text(const MetricReport& report, const ReportContext& ctx, std::ostream& out);
// One JSON object per (metric, k).
void write_report_jsonl(const MetricReport& report, const ReportContext& ctx, std::ostream& out);

// `{"epoch", "train_loss", "val_metric", "seconds"}` per line.
void write_history_jsonl(std::span<const EpochRecord> history, std::ostream& out);

// Fixed six-decimal formatting used by every report.
std::string format_fixed(double value, int decimals = 6);

}  // namespace p4r
