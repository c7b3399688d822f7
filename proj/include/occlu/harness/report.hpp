#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "occlu/harness/dataset.hpp"
#include "occlu/harness/metrics.hpp"

namespace occlu::harness {

inline std::string au_label(std::size_t i) { return i < kMaxAU ? kAUNames[i] : "AU#" + std::to_string(i + 1); }

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// One row per report: model, mask, ratio, fold, per-AU F1 and the average, as fractions.
inline std::string reports_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    const std::size_t n = reports.empty() ? 0 : reports.front().f1.size();
    out << "model,mask,ratio,fold";
    for (std::size_t i = 0; i < n; ++i) out << ',' << au_label(i);
    out << ",avg\n";
    for (const auto& r : reports) {
        out << r.model << ',' << r.mask_kind << ',' << fixed(r.ratio, 2) << ',' << r.fold;
        for (double f : r.f1) out << ',' << fixed(f, 6);
        out << ',' << fixed(r.average, 6) << '\n';
    }
    return out.str();
}

/// Aligned table with F1 in percent.
inline std::string reports_table(const std::vector<MetricsReport>& reports) {
    const std::size_t n = reports.empty() ? 0 : reports.front().f1.size();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> head{"Model", "Mask", "Ratio", "Fold"};
    for (std::size_t i = 0; i < n; ++i) head.push_back(au_label(i));
    head.push_back("Avg.");
    rows.push_back(head);
    for (const auto& r : reports) {
        std::vector<std::string> row{r.model, r.mask_kind, fixed(100.0 * r.ratio, 0) + "%", std::to_string(r.fold)};
        for (double f : r.f1) row.push_back(fixed(100.0 * f, 2));
        row.push_back(fixed(100.0 * r.average, 2));
        rows.push_back(row);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::ostringstream out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const auto& cell = rows[r][c];
            const bool left = c < 2;
            if (c) out << "  ";
            if (!left) out << std::string(width[c] - cell.size(), ' ');
            out << cell;
            if (left && c + 1 < rows[r].size()) out << std::string(width[c] - cell.size(), ' ');
        }
        out << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w;
            out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    return out.str();
}

/// Parses the CSV written by reports_csv.
inline std::vector<MetricsReport> parse_reports_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("report: empty CSV");
    std::vector<std::string> head;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) head.push_back(cell);
    }
    if (head.size() < 6 || head[0] != "model" || head.back() != "avg") throw std::invalid_argument("report: unrecognized CSV header");
    const std::size_t n = head.size() - 5;
    std::vector<MetricsReport> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != head.size()) throw std::invalid_argument("report: row width differs from header");
        MetricsReport r;
        r.model = cells[0];
        r.mask_kind = cells[1];
        r.ratio = std::stod(cells[2]);
        r.fold = std::stoul(cells[3]);
        for (std::size_t i = 0; i < n; ++i) r.f1.push_back(std::stod(cells[4 + i]));
        r.average = std::stod(cells.back());
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace occlu::harness
