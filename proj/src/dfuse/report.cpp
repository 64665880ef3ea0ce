#include "dfuse/report.hpp"

#include "dfuse/error.hpp"

#include <cstdio>
#include <fstream>

namespace dfuse::report {

namespace {

const char* const kColumns[] = {"EN", "MI", "SF", "VIF", "Q^AB/F", "SSIM-sum"};

std::string f6(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<double> values(const metrics::MetricReport& m) { return {m.en, m.mi, m.sf, m.vif, m.qabf, m.ssim_sum}; }

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::Io, "cannot write " + path.string());
    out << text;
}

}  // namespace

metrics::MetricReport mean(const std::vector<Row>& rows)
{
    metrics::MetricReport m;
    if (rows.empty())
        return m;
    for (const auto& r : rows) {
        m.en += r.m.en;
        m.mi += r.m.mi;
        m.sf += r.m.sf;
        m.vif += r.m.vif;
        m.qabf += r.m.qabf;
        m.ssim_sum += r.m.ssim_sum;
    }
    const double n = static_cast<double>(rows.size());
    m.en /= n;
    m.mi /= n;
    m.sf /= n;
    m.vif /= n;
    m.qabf /= n;
    m.ssim_sum /= n;
    return m;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::string to_csv(const std::vector<Row>& rows)
{
    std::string s = "id";
    for (const char* c : kColumns)
        s += std::string(",") + csv_field(c);
    s += "\r\n";
    auto line = [&s](const std::string& id, const metrics::MetricReport& m) {
        s += csv_field(id);
        for (double v : values(m))
            s += "," + f6(v);
        s += "\r\n";
    };
    for (const auto& r : rows)
        line(r.id, r.m);
    line("mean", mean(rows));
    return s;
}

std::string to_markdown(const std::vector<Row>& rows)
{
    std::string s = "| id |";
    for (const char* c : kColumns)
        s += std::string(" ") + c + " |";
    s += "\n|---|";
    for (std::size_t i = 0; i < std::size(kColumns); ++i)
        s += "---:|";
    s += "\n";
    for (const auto& r : rows) {
        std::string id = r.id;
        for (std::size_t p = 0; (p = id.find('|', p)) != std::string::npos; p += 2)
            id.replace(p, 1, "\\|");
        s += "| " + id + " |";
        for (double v : values(r.m))
            s += " " + f6(v) + " |";
        s += "\n";
    }
    s += "| **mean** |";
    for (double v : values(mean(rows)))
        s += " **" + f6(v) + "** |";
    return s + "\n";
}

void write(const std::vector<Row>& rows, const std::filesystem::path& csv, const std::filesystem::path& markdown)
{
    write_text(csv, to_csv(rows));
    write_text(markdown, to_markdown(rows));
}

}  // namespace dfuse::report
