#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eqloop/errors.hpp"
#include "eqloop/expr.hpp"

namespace eqloop {

inline constexpr Eigen::Index kMinTrajectorySamples = 10;

/// Sampled trajectory with an optional exogenous input channel. Rows
/// [0, split) form the training segment, [split, n) the test segment.
struct Trajectory {
    Eigen::VectorXd times;
    Eigen::MatrixXd states; // n x d
    Eigen::MatrixXd inputs; // n x m, m may be 0
    Eigen::Index split = 0;

    std::vector<std::string> state_names; // optional, size d when present
    std::vector<std::string> state_units;
    std::vector<std::string> input_names;
    std::vector<std::string> input_units;
    nlohmann::json metadata = nlohmann::json::object();

    Eigen::Index samples() const { return times.size(); }
    Eigen::Index dim() const { return states.cols(); }
    Eigen::Index num_inputs() const { return inputs.cols(); }
    Eigen::Index train_size() const { return split; }
    Eigen::Index test_size() const { return samples() - split; }

    /// Throws InvalidTrajectory when an invariant does not hold.
    void validate() const {
        const Eigen::Index n = times.size();
        if (n < kMinTrajectorySamples)
            throw InvalidTrajectory("trajectory needs at least " + std::to_string(kMinTrajectorySamples) +
                                    " samples, got " + std::to_string(n));
        if (states.rows() != n || states.cols() < 1)
            throw InvalidTrajectory("state matrix must be n x d with d >= 1");
        if (inputs.cols() > 0 && inputs.rows() != n)
            throw InvalidTrajectory("input matrix must have one row per sample");
        for (Eigen::Index j = 1; j < n; ++j)
            if (!(times[j] > times[j - 1]))
                throw InvalidTrajectory("times must be strictly increasing (sample " + std::to_string(j) + ")");
        if (!times.allFinite() || !states.allFinite() || (inputs.size() > 0 && !inputs.allFinite()))
            throw InvalidTrajectory("trajectory contains non-finite entries");
        if (split <= 0 || split >= n)
            throw InvalidTrajectory("split index must satisfy 0 < split < n");
    }

    std::string state_name(Eigen::Index i) const {
        if (static_cast<std::size_t>(i) < state_names.size() && !state_names[i].empty())
            return state_names[i];
        return "x" + std::to_string(i);
    }
};

inline Eigen::Index split_index(Eigen::Index n, double fraction) {
    return static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(n)));
}

// --- CSV + sidecar ------------------------------------------------------------
//   header: t,x0,...,x{d-1}[,u0,...]; numbers in shortest round-trip form.

inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "t";
    for (Eigen::Index i = 0; i < traj.dim(); ++i)
        out += ",x" + std::to_string(i);
    for (Eigen::Index j = 0; j < traj.num_inputs(); ++j)
        out += ",u" + std::to_string(j);
    out += '\n';
    for (Eigen::Index r = 0; r < traj.samples(); ++r) {
        out += format_number(traj.times[r]);
        for (Eigen::Index i = 0; i < traj.dim(); ++i)
            out += ',' + format_number(traj.states(r, i));
        for (Eigen::Index j = 0; j < traj.num_inputs(); ++j)
            out += ',' + format_number(traj.inputs(r, j));
        out += '\n';
    }
    return out;
}

inline nlohmann::json trajectory_metadata(const Trajectory& traj) {
    nlohmann::json m = traj.metadata.is_object() ? traj.metadata : nlohmann::json::object();
    m["split_index"] = traj.split;
    m["n_samples"] = traj.samples();
    m["dim"] = traj.dim();
    m["n_inputs"] = traj.num_inputs();
    std::vector<std::string> names, units, in_names, in_units;
    for (Eigen::Index i = 0; i < traj.dim(); ++i) {
        names.push_back(traj.state_name(i));
        units.push_back(static_cast<std::size_t>(i) < traj.state_units.size() ? traj.state_units[i] : "");
    }
    for (Eigen::Index j = 0; j < traj.num_inputs(); ++j) {
        in_names.push_back(static_cast<std::size_t>(j) < traj.input_names.size() ? traj.input_names[j]
                                                                                  : "u" + std::to_string(j));
        in_units.push_back(static_cast<std::size_t>(j) < traj.input_units.size() ? traj.input_units[j] : "");
    }
    m["state_names"] = names;
    m["state_units"] = units;
    m["input_names"] = in_names;
    m["input_units"] = in_units;
    return m;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

inline double parse_cell(const std::string& cell, std::size_t line_no) {
    std::string s = cell;
    while (!s.empty() && (s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    std::size_t start = s.find_first_not_of(' ');
    s = start == std::string::npos ? "" : s.substr(start);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw InvalidTrajectory("bad number '" + cell + "' on line " + std::to_string(line_no));
    return v;
}

} // namespace detail

/// Parses the CSV body; split and names come from the sidecar document.
inline Trajectory trajectory_from_csv(const std::string& text, const nlohmann::json& meta) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header))
        throw InvalidTrajectory("empty trajectory file");
    if (!header.empty() && header.back() == '\r')
        header.pop_back();
    auto cols = detail::split_csv_line(header);
    if (cols.empty() || cols[0] != "t")
        throw InvalidTrajectory("first column must be 't'");
    std::size_t d = 0, m = 0;
    for (std::size_t c = 1; c < cols.size(); ++c) {
        const std::string expect_x = "x" + std::to_string(d);
        const std::string expect_u = "u" + std::to_string(m);
        if (m == 0 && cols[c] == expect_x)
            ++d;
        else if (cols[c] == expect_u)
            ++m;
        else
            throw InvalidTrajectory("unexpected column '" + cols[c] + "'; expected t,x0..,u0..");
    }
    if (d == 0)
        throw InvalidTrajectory("trajectory has no state columns");

    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r")
            continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != cols.size())
            throw InvalidTrajectory("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                    " cells, expected " + std::to_string(cols.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells)
            row.push_back(detail::parse_cell(c, line_no));
        rows.push_back(std::move(row));
    }

    Trajectory traj;
    const auto n = static_cast<Eigen::Index>(rows.size());
    traj.times.resize(n);
    traj.states.resize(n, static_cast<Eigen::Index>(d));
    traj.inputs.resize(n, static_cast<Eigen::Index>(m));
    for (Eigen::Index r = 0; r < n; ++r) {
        traj.times[r] = rows[r][0];
        for (std::size_t i = 0; i < d; ++i)
            traj.states(r, static_cast<Eigen::Index>(i)) = rows[r][1 + i];
        for (std::size_t j = 0; j < m; ++j)
            traj.inputs(r, static_cast<Eigen::Index>(j)) = rows[r][1 + d + j];
    }

    if (meta.is_object()) {
        traj.metadata = meta;
        if (meta.contains("split_index"))
            traj.split = meta["split_index"].get<Eigen::Index>();
        auto strings = [&](const char* key) {
            return meta.contains(key) ? meta[key].get<std::vector<std::string>>() : std::vector<std::string>{};
        };
        traj.state_names = strings("state_names");
        traj.state_units = strings("state_units");
        traj.input_names = strings("input_names");
        traj.input_units = strings("input_units");
        for (const char* k : {"split_index", "n_samples", "dim", "n_inputs", "state_names", "state_units",
                              "input_names", "input_units"})
            traj.metadata.erase(k);
    }
    if (traj.split == 0)
        traj.split = split_index(n, 0.7);
    traj.validate();
    return traj;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".meta.json");
    return p;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out)
        throw IoError("failed writing '" + path.string() + "'");
}

inline void save_trajectory(const Trajectory& traj, const std::filesystem::path& csv) {
    write_text_file(csv, trajectory_csv(traj));
    write_text_file(sidecar_path(csv), trajectory_metadata(traj).dump(2) + "\n");
}

inline Trajectory load_trajectory(const std::filesystem::path& csv) {
    std::string body = read_text_file(csv);
    nlohmann::json meta = nlohmann::json::object();
    auto side = sidecar_path(csv);
    if (std::filesystem::exists(side)) {
        try {
            meta = nlohmann::json::parse(read_text_file(side));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidTrajectory("bad metadata sidecar '" + side.string() + "': " + e.what());
        }
    }
    return trajectory_from_csv(body, meta);
}

} // namespace eqloop
