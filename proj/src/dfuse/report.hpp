#pragma once

#include "dfuse/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dfuse::report {

struct Row {
    std::string id;
    metrics::MetricReport m;
};

metrics::MetricReport mean(const std::vector<Row>& rows);

// Per-image rows followed by a "mean" row; fields quoted per RFC 4180 when needed.
std::string to_csv(const std::vector<Row>& rows);
// Markdown table with the same columns and a bold mean row.
std::string to_markdown(const std::vector<Row>& rows);

std::string csv_field(const std::string& s);

void write(const std::vector<Row>& rows, const std::filesystem::path& csv, const std::filesystem::path& markdown);

}  // namespace dfuse::report
