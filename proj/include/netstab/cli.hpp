// Scenario files on disk, lossless trace round-tripping, and the command
// entry points behind the netstab binary. Exit codes are part of the
// contract:
//   0 success, 1 usage, 2 load/schema error, 3 instability verdict or failed
//   verification, 4 inconsistent data, 5 synthesis/numeric failure.
#pragma once

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "netstab/analysis.hpp"
#include "netstab/sim.hpp"

namespace netstab {

using Json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitLoad = 2;
inline constexpr int kExitVerdict = 3;
inline constexpr int kExitInconsistent = 4;
inline constexpr int kExitSynthesis = 5;

// -----------------------------------------------------------------------------
// Logging. NETSTAB_LOG = quiet | info | debug (default info), on stderr so
// stdout stays machine-readable.
// -----------------------------------------------------------------------------

inline int log_verbosity() {
    static const int v = [] {
        const char* e = std::getenv("NETSTAB_LOG");
        if (!e) return 1;
        const std::string s(e);
        if (s == "quiet") return 0;
        if (s == "debug") return 2;
        return 1;
    }();
    return v;
}

inline void log_info(const std::string& msg) {
    if (log_verbosity() >= 1) std::cerr << msg << '\n';
}

inline void log_debug(const std::string& msg) {
    if (log_verbosity() >= 2) std::cerr << msg << '\n';
}

namespace detail {

[[nodiscard]] inline std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---- strict JSON field access -----------------------------------------------

inline void require_keys(const Json& j, std::initializer_list<const char*> required,
                         std::initializer_list<const char*> optional, const std::string& where) {
    if (!j.is_object()) throw LoadError(where + ": expected an object");
    for (const char* k : required)
        if (!j.contains(k)) throw LoadError(where + ": missing key '" + k + "'");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : required) known = known || it.key() == k;
        for (const char* k : optional) known = known || it.key() == k;
        if (!known) throw LoadError(where + ": unknown key '" + it.key() + "'");
    }
}

[[nodiscard]] inline double json_double(const Json& j, const std::string& where) {
    if (!j.is_number()) throw LoadError(where + ": expected a number");
    return j.get<double>();
}

[[nodiscard]] inline long long json_int(const Json& j, const std::string& where) {
    if (!j.is_number_integer()) throw LoadError(where + ": expected an integer");
    return j.get<long long>();
}

[[nodiscard]] inline std::uint64_t json_uint(const Json& j, const std::string& where) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() &&
                                   j.get<long long>() < 0))
        throw LoadError(where + ": expected a non-negative integer");
    return j.get<std::uint64_t>();
}

[[nodiscard]] inline std::string json_string(const Json& j, const std::string& where) {
    if (!j.is_string()) throw LoadError(where + ": expected a string");
    return j.get<std::string>();
}

[[nodiscard]] inline Vec json_vec(const Json& j, const std::string& where) {
    if (!j.is_array()) throw LoadError(where + ": expected an array of numbers");
    Vec v(static_cast<int>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k)
        v(static_cast<int>(k)) = json_double(j[k], where);
    return v;
}

[[nodiscard]] inline std::vector<Vec> json_vec_list(const Json& j, const std::string& where) {
    if (!j.is_array()) throw LoadError(where + ": expected an array of arrays");
    std::vector<Vec> out;
    out.reserve(j.size());
    for (std::size_t k = 0; k < j.size(); ++k)
        out.push_back(json_vec(j[k], where + "[" + std::to_string(k) + "]"));
    return out;
}

[[nodiscard]] inline std::vector<std::pair<int, int>> json_edges(const Json& j,
                                                                 const std::string& where) {
    if (!j.is_array()) throw LoadError(where + ": expected an array of [a, b] pairs");
    std::vector<std::pair<int, int>> e;
    e.reserve(j.size());
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2)
            throw LoadError(where + ": each edge must be a pair of subsystem ids");
        e.emplace_back(static_cast<int>(json_int(p[0], where)),
                       static_cast<int>(json_int(p[1], where)));
    }
    return e;
}

[[nodiscard]] inline Json vec_json(const Vec& v) {
    Json a = Json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

[[nodiscard]] inline Json vec_list_json(const std::vector<Vec>& vs) {
    Json a = Json::array();
    for (const Vec& v : vs) a.push_back(vec_json(v));
    return a;
}

}  // namespace detail

// -----------------------------------------------------------------------------
// Scenario documents. Unknown keys are rejected so typos fail loudly, and
// every Scenario invariant is enforced before the document is accepted.
// -----------------------------------------------------------------------------

[[nodiscard]] inline Scenario parse_scenario(const Json& j, const std::string& fallback_name) {
    using detail::json_double;
    using detail::json_int;
    using detail::json_string;
    detail::require_keys(
        j, {"topology", "truth", "param_box", "W_true", "W_assumed", "dbar", "H", "T"},
        {"name", "T_stop", "disturbance", "seed", "algorithm", "weights", "synthesis_cadence",
         "x0"},
        "scenario");

    Scenario s;
    s.name = j.contains("name") ? json_string(j.at("name"), "name") : fallback_name;

    const Json& topo = j.at("topology");
    detail::require_keys(topo, {"subsystems", "dyn_edges", "comm_edges"}, {}, "topology");
    if (!topo.at("subsystems").is_array())
        throw LoadError("topology.subsystems: expected an array");
    std::vector<SubsystemSpec> specs;
    for (const auto& sub : topo.at("subsystems")) {
        detail::require_keys(sub, {"states", "inputs"}, {}, "subsystem");
        specs.push_back({static_cast<int>(json_int(sub.at("states"), "subsystem.states")),
                         static_cast<int>(json_int(sub.at("inputs"), "subsystem.inputs"))});
    }
    s.topology = make_topology(std::move(specs),
                               detail::json_edges(topo.at("dyn_edges"), "topology.dyn_edges"),
                               detail::json_edges(topo.at("comm_edges"), "topology.comm_edges"));

    s.theta_true = detail::json_vec_list(j.at("truth"), "truth");
    const Json& box = j.at("param_box");
    detail::require_keys(box, {"lo", "hi"}, {}, "param_box");
    s.theta_lo = detail::json_vec_list(box.at("lo"), "param_box.lo");
    s.theta_hi = detail::json_vec_list(box.at("hi"), "param_box.hi");

    s.w_true = json_double(j.at("W_true"), "W_true");
    s.w_assumed = json_double(j.at("W_assumed"), "W_assumed");
    s.dbar = static_cast<int>(json_int(j.at("dbar"), "dbar"));
    s.horizon_h = static_cast<int>(json_int(j.at("H"), "H"));
    s.steps = json_int(j.at("T"), "T");
    if (j.contains("T_stop")) s.t_stop = json_int(j.at("T_stop"), "T_stop");
    if (j.contains("disturbance")) s.disturbance = json_string(j.at("disturbance"), "disturbance");
    if (j.contains("seed")) s.seed = detail::json_uint(j.at("seed"), "seed");
    if (j.contains("algorithm")) s.algorithm = json_string(j.at("algorithm"), "algorithm");
    if (j.contains("synthesis_cadence")) {
        const std::string c = json_string(j.at("synthesis_cadence"), "synthesis_cadence");
        if (c == "every-step")
            s.synth_on_change_only = false;
        else if (c == "on-change")
            s.synth_on_change_only = true;
        else
            throw LoadError("synthesis_cadence: expected 'every-step' or 'on-change', got '" + c +
                            "'");
    }
    if (j.contains("weights")) {
        const Json& w = j.at("weights");
        detail::require_keys(w, {"q", "r"}, {}, "weights");
        const Vec q = detail::json_vec(w.at("q"), "weights.q");
        const Vec r = detail::json_vec(w.at("r"), "weights.r");
        if (q.size() != s.topology.total_states)
            throw LoadError("weights.q: expected one entry per global state");
        if (r.size() != s.topology.total_inputs)
            throw LoadError("weights.r: expected one entry per global input");
        if ((q.array() <= 0.0).any() || (r.array() <= 0.0).any())
            throw LoadError("weights: entries must be positive");
        s.Q = Mat(q.asDiagonal());
        s.R = Mat(r.asDiagonal());
    }
    if (j.contains("x0")) s.x0 = detail::json_vec(j.at("x0"), "x0");

    validate_scenario(s);
    return s;
}

[[nodiscard]] inline Json scenario_to_json(const Scenario& s) {
    const NetworkTopology& t = s.topology;
    Json subs = Json::array();
    for (const auto& sub : t.subsystems)
        subs.push_back({{"states", sub.state_dim}, {"inputs", sub.input_dim}});
    Json dyn = Json::array();
    for (int i = 0; i < t.count(); ++i)
        for (int src : t.dyn_neighbors[static_cast<std::size_t>(i)])
            if (src != i) dyn.push_back({i, src});
    Json comm = Json::array();
    for (int src = 0; src < t.count(); ++src)
        for (int dst : t.comm_out[static_cast<std::size_t>(src)])
            if (dst != src) comm.push_back({src, dst});

    Json j;
    j["name"] = s.name;
    j["topology"] = {{"subsystems", subs}, {"dyn_edges", dyn}, {"comm_edges", comm}};
    j["truth"] = detail::vec_list_json(s.theta_true);
    j["param_box"] = {{"lo", detail::vec_list_json(s.theta_lo)},
                      {"hi", detail::vec_list_json(s.theta_hi)}};
    j["W_true"] = s.w_true;
    j["W_assumed"] = s.w_assumed;
    j["dbar"] = s.dbar;
    j["H"] = s.horizon_h;
    j["T"] = s.steps;
    j["T_stop"] = s.t_stop;
    j["disturbance"] = s.disturbance;
    j["seed"] = s.seed;
    j["algorithm"] = s.algorithm;
    j["synthesis_cadence"] = s.synth_on_change_only ? "on-change" : "every-step";
    if (s.Q.size()) {
        const Mat dq = Mat(Vec(s.Q.diagonal()).asDiagonal());
        const Mat dr = Mat(Vec(s.R.diagonal()).asDiagonal());
        if ((s.Q - dq).cwiseAbs().maxCoeff() != 0.0 || (s.R - dr).cwiseAbs().maxCoeff() != 0.0)
            throw LoadError("scenario: only diagonal weights can be written to disk");
        j["weights"] = {{"q", detail::vec_json(s.Q.diagonal())},
                        {"r", detail::vec_json(s.R.diagonal())}};
    }
    if (s.x0.size()) j["x0"] = detail::vec_json(s.x0);
    return j;
}

[[nodiscard]] inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return j;
}

[[nodiscard]] inline Scenario load_scenario(const std::filesystem::path& path) {
    return parse_scenario(read_json_file(path), path.stem().string());
}

// -----------------------------------------------------------------------------
// Trace CSV. One row per (tick, subsystem) carrying that subsystem's slice of
// x, u, w, the disturbance estimate, and the selected model; a final block of
// rows carries the terminal state. Every value is printed with 17 significant
// digits so parse(emit(trace)) reproduces the run bit for bit.
// -----------------------------------------------------------------------------

inline constexpr const char* kTraceHeader = "t,subsystem,x...,u...,w...,what...,theta...";

inline void write_trace_csv(std::ostream& os, const NetworkTopology& t, const TraceLog& tr) {
    os << kTraceHeader << '\n';
    const bool with_theta = !tr.theta.empty();
    for (long long k = 0; k < tr.steps; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        for (int i = 0; i < t.count(); ++i) {
            os << k << ',' << i;
            const int xb = t.state_base(i), nx = t.state_dim(i);
            const int ub = t.input_base(i), nu = t.input_dim(i);
            for (int r = 0; r < nx; ++r) os << ',' << format_g17(tr.x[kk](xb + r));
            for (int r = 0; r < nu; ++r) os << ',' << format_g17(tr.u[kk](ub + r));
            for (int r = 0; r < nx; ++r) os << ',' << format_g17(tr.w[kk](xb + r));
            for (int r = 0; r < nx; ++r) os << ',' << format_g17(tr.what[kk](xb + r));
            if (with_theta) {
                const Vec& th = tr.theta[kk][static_cast<std::size_t>(i)];
                for (int r = 0; r < th.size(); ++r) os << ',' << format_g17(th(r));
            }
            os << '\n';
        }
    }
    const auto last = static_cast<std::size_t>(tr.steps);
    for (int i = 0; i < t.count(); ++i) {
        os << tr.steps << ',' << i;
        for (int r = 0; r < t.state_dim(i); ++r)
            os << ',' << format_g17(tr.x[last](t.state_base(i) + r));
        os << '\n';
    }
}

namespace detail {

[[nodiscard]] inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t p = line.find(',', start);
        if (p == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

[[nodiscard]] inline double csv_double(const std::string& f, long long lineno) {
    const char* b = f.c_str();
    char* end = nullptr;
    const double v = std::strtod(b, &end);
    if (f.empty() || end != b + f.size())
        throw LoadError("trace.csv line " + std::to_string(lineno) + ": bad number '" + f + "'");
    return v;
}

[[nodiscard]] inline long long csv_int(const std::string& f, long long lineno) {
    const char* b = f.c_str();
    char* end = nullptr;
    const long long v = std::strtoll(b, &end, 10);
    if (f.empty() || end != b + f.size())
        throw LoadError("trace.csv line " + std::to_string(lineno) + ": bad index '" + f + "'");
    return v;
}

}  // namespace detail

[[nodiscard]] inline TraceLog read_trace_csv(std::istream& in, const NetworkTopology& t) {
    std::string line;
    if (!std::getline(in, line)) throw LoadError("trace.csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTraceHeader) throw LoadError("trace.csv: unexpected header '" + line + "'");

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(detail::split_csv(line));
    }
    const int N = t.count();
    if (rows.empty() || rows.size() % static_cast<std::size_t>(N) != 0)
        throw LoadError("trace.csv: row count does not tile the subsystem count");
    const long long steps = static_cast<long long>(rows.size() / static_cast<std::size_t>(N)) - 1;
    if (steps < 1) throw LoadError("trace.csv: no simulation rows");

    const std::size_t plain0 = 2 + static_cast<std::size_t>(
                                       t.state_dim(0) + t.input_dim(0) + 2 * t.state_dim(0));
    const std::size_t full0 = plain0 + static_cast<std::size_t>(theta_layout(t, 0).dim);
    bool with_theta = false;
    if (rows.front().size() == full0)
        with_theta = true;
    else if (rows.front().size() != plain0)
        throw LoadError("trace.csv line 2: unexpected field count");

    TraceLog tr;
    tr.steps = steps;
    tr.x.assign(static_cast<std::size_t>(steps) + 1, Vec::Zero(t.total_states));
    tr.u.assign(static_cast<std::size_t>(steps), Vec::Zero(t.total_inputs));
    tr.w.assign(static_cast<std::size_t>(steps), Vec::Zero(t.total_states));
    tr.what.assign(static_cast<std::size_t>(steps), Vec::Zero(t.total_states));
    if (with_theta) {
        std::vector<Vec> blank;
        for (int i = 0; i < N; ++i) blank.push_back(Vec::Zero(theta_layout(t, i).dim));
        tr.theta.assign(static_cast<std::size_t>(steps), blank);
    }

    for (std::size_t r = 0; r < rows.size(); ++r) {
        const long long lineno = static_cast<long long>(r) + 2;
        const auto& f = rows[r];
        const long long k = static_cast<long long>(r) / N;
        const int i = static_cast<int>(r % static_cast<std::size_t>(N));
        if (detail::csv_int(f[0], lineno) != k || detail::csv_int(f[1], lineno) != i)
            throw LoadError("trace.csv line " + std::to_string(lineno) +
                            ": rows out of canonical order");
        const int xb = t.state_base(i), nx = t.state_dim(i);
        const int ub = t.input_base(i), nu = t.input_dim(i);
        const int td = with_theta ? theta_layout(t, i).dim : 0;
        const std::size_t want =
            k == steps ? 2 + static_cast<std::size_t>(nx)
                       : 2 + static_cast<std::size_t>(nx + nu + 2 * nx + td);
        if (f.size() != want)
            throw LoadError("trace.csv line " + std::to_string(lineno) +
                            ": unexpected field count");
        std::size_t p = 2;
        const auto kk = static_cast<std::size_t>(k);
        for (int q = 0; q < nx; ++q) tr.x[kk](xb + q) = detail::csv_double(f[p++], lineno);
        if (k == steps) continue;
        for (int q = 0; q < nu; ++q) tr.u[kk](ub + q) = detail::csv_double(f[p++], lineno);
        for (int q = 0; q < nx; ++q) tr.w[kk](xb + q) = detail::csv_double(f[p++], lineno);
        for (int q = 0; q < nx; ++q) tr.what[kk](xb + q) = detail::csv_double(f[p++], lineno);
        for (int q = 0; q < td; ++q)
            tr.theta[kk][static_cast<std::size_t>(i)](q) = detail::csv_double(f[p++], lineno);
    }
    return tr;
}

// -----------------------------------------------------------------------------
// Sidecar JSON: everything the CSV does not carry (bundles, movement, run
// metadata). Doubles survive the JSON round trip exactly.
// -----------------------------------------------------------------------------

[[nodiscard]] inline Json column_to_json(const ClosedLoopColumn& c) {
    Json j;
    j["owner"] = c.owner;
    j["state_index"] = c.state_index;
    j["horizon"] = c.horizon;
    j["synthesized_at"] = c.synthesized_at;
    j["model_stamp"] = c.model_stamp;
    j["objective"] = c.objective;
    j["kkt_residual"] = c.kkt_residual;
    j["phi_x"] = detail::vec_list_json(c.phi_x);
    j["phi_u"] = detail::vec_list_json(c.phi_u);
    return j;
}

[[nodiscard]] inline ClosedLoopColumn column_from_json(const Json& j) {
    detail::require_keys(j,
                         {"owner", "state_index", "horizon", "synthesized_at", "model_stamp",
                          "objective", "kkt_residual", "phi_x", "phi_u"},
                         {}, "column");
    ClosedLoopColumn c;
    c.owner = static_cast<int>(detail::json_int(j.at("owner"), "column.owner"));
    c.state_index = static_cast<int>(detail::json_int(j.at("state_index"), "column.state_index"));
    c.horizon = static_cast<int>(detail::json_int(j.at("horizon"), "column.horizon"));
    c.synthesized_at = detail::json_int(j.at("synthesized_at"), "column.synthesized_at");
    c.model_stamp = detail::json_uint(j.at("model_stamp"), "column.model_stamp");
    c.objective = detail::json_double(j.at("objective"), "column.objective");
    c.kkt_residual = detail::json_double(j.at("kkt_residual"), "column.kkt_residual");
    c.phi_x = detail::json_vec_list(j.at("phi_x"), "column.phi_x");
    c.phi_u = detail::json_vec_list(j.at("phi_u"), "column.phi_u");
    if (static_cast<int>(c.phi_x.size()) != c.horizon + 1 ||
        static_cast<int>(c.phi_u.size()) != c.horizon)
        throw LoadError("column: phi length disagrees with the horizon");
    return c;
}

[[nodiscard]] inline Json sidecar_to_json(const TraceLog& tr) {
    Json j;
    j["scenario"] = tr.scenario;
    j["algorithm"] = tr.algorithm;
    j["horizon"] = tr.horizon_h;
    j["steps"] = tr.steps;
    j["ident_done"] = tr.ident_done;
    Json mv = Json::array();
    for (double m : tr.movement) mv.push_back(m);
    j["movement"] = mv;
    Json bundles = Json::array();
    for (const SubController& sc : tr.bundles) {
        Json b;
        b["owner"] = sc.owner;
        b["stamp"] = sc.stamp;
        Json cols = Json::array();
        for (const auto& c : sc.columns) cols.push_back(column_to_json(c));
        b["columns"] = cols;
        bundles.push_back(std::move(b));
    }
    j["bundles"] = bundles;
    return j;
}

inline void sidecar_from_json(const Json& j, TraceLog& tr) {
    detail::require_keys(
        j, {"scenario", "algorithm", "horizon", "steps", "ident_done", "movement", "bundles"}, {},
        "columns.json");
    tr.scenario = detail::json_string(j.at("scenario"), "columns.json scenario");
    tr.algorithm = detail::json_string(j.at("algorithm"), "columns.json algorithm");
    tr.horizon_h = static_cast<int>(detail::json_int(j.at("horizon"), "columns.json horizon"));
    if (detail::json_int(j.at("steps"), "columns.json steps") != tr.steps)
        throw LoadError("columns.json: step count disagrees with trace.csv");
    tr.ident_done = detail::json_int(j.at("ident_done"), "columns.json ident_done");
    tr.movement.clear();
    for (const auto& m : j.at("movement"))
        tr.movement.push_back(detail::json_double(m, "columns.json movement"));
    tr.bundles.clear();
    for (const auto& b : j.at("bundles")) {
        detail::require_keys(b, {"owner", "stamp", "columns"}, {}, "bundle");
        SubController sc;
        sc.owner = static_cast<int>(detail::json_int(b.at("owner"), "bundle.owner"));
        sc.stamp = detail::json_int(b.at("stamp"), "bundle.stamp");
        for (const auto& c : b.at("columns")) sc.columns.push_back(column_from_json(c));
        tr.bundles.push_back(std::move(sc));
    }
}

// -----------------------------------------------------------------------------
// Run directories: scenario.json, trace.csv, columns.json, reports.json.
// -----------------------------------------------------------------------------

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << body;
    out.flush();
    if (!out) throw LoadError("write failed for " + path.string());
}

inline void write_run_dir(const std::filesystem::path& dir, const Scenario& s, const TraceLog& tr,
                          const Json& reports) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw LoadError("cannot create " + dir.string() + ": " + ec.message());
    write_text_file(dir / "scenario.json", scenario_to_json(s).dump(2) + "\n");
    std::ostringstream csv;
    write_trace_csv(csv, s.topology, tr);
    write_text_file(dir / "trace.csv", csv.str());
    write_text_file(dir / "columns.json", sidecar_to_json(tr).dump(2) + "\n");
    write_text_file(dir / "reports.json", reports.dump(2) + "\n");
}

struct RunDir {
    Scenario scenario;
    TraceLog trace;
};

[[nodiscard]] inline RunDir read_run_dir(const std::filesystem::path& dir) {
    RunDir rd;
    rd.scenario = parse_scenario(read_json_file(dir / "scenario.json"), dir.filename().string());
    std::ifstream csv(dir / "trace.csv");
    if (!csv) throw LoadError("cannot open " + (dir / "trace.csv").string());
    rd.trace = read_trace_csv(csv, rd.scenario.topology);
    sidecar_from_json(read_json_file(dir / "columns.json"), rd.trace);
    if (rd.trace.steps != rd.scenario.steps)
        throw LoadError(dir.string() + ": trace length disagrees with the scenario");
    if (rd.trace.horizon_h != rd.scenario.horizon_h)
        throw LoadError(dir.string() + ": horizon disagrees with the scenario");
    return rd;
}

// -----------------------------------------------------------------------------
// Post-run reports.
// -----------------------------------------------------------------------------

namespace detail {

struct EnvelopeCheck {
    double s0 = 0.0;
    double mass = 0.0;
    double sup_what = 0.0;
    bool dominated = true;
};

[[nodiscard]] inline EnvelopeCheck envelope_check(const Scenario& s, const TraceLog& tr,
                                                  const ErrorSeries& es) {
    EnvelopeCheck ec;
    ec.s0 = tr.x.front().lpNorm<Eigen::Infinity>();
    ec.mass = es.total;
    const ConvolutionBound cb = convolution_bound(ec.s0, s.w_assumed, s.horizon_h, es.total);
    for (std::size_t k = 0; k < tr.what.size(); ++k) {
        const double m = tr.what[k].lpNorm<Eigen::Infinity>();
        ec.sup_what = std::max(ec.sup_what, m);
        if (m > cb(static_cast<long long>(k)) + 1e-9) ec.dominated = false;
    }
    return ec;
}

// Bitwise equality, used by replay verification. Sign bits matter; the CSV
// and JSON encodings both preserve them.
[[nodiscard]] inline bool bits_equal(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) ==
           0;
}

[[nodiscard]] inline bool bits_equal(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!bits_equal(a[k], b[k])) return false;
    return true;
}

[[nodiscard]] inline bool same_column(const ClosedLoopColumn& a, const ClosedLoopColumn& b) {
    if (a.owner != b.owner || a.state_index != b.state_index || a.horizon != b.horizon ||
        a.synthesized_at != b.synthesized_at || a.model_stamp != b.model_stamp)
        return false;
    if (std::memcmp(&a.objective, &b.objective, sizeof(double)) != 0) return false;
    if (std::memcmp(&a.kkt_residual, &b.kkt_residual, sizeof(double)) != 0) return false;
    return bits_equal(a.phi_x, b.phi_x) && bits_equal(a.phi_u, b.phi_u);
}

[[nodiscard]] inline bool same_run(const TraceLog& a, const TraceLog& b) {
    if (a.steps != b.steps || a.horizon_h != b.horizon_h || a.algorithm != b.algorithm ||
        a.ident_done != b.ident_done)
        return false;
    if (!bits_equal(a.x, b.x) || !bits_equal(a.u, b.u) || !bits_equal(a.w, b.w) ||
        !bits_equal(a.what, b.what))
        return false;
    if (a.theta.size() != b.theta.size()) return false;
    for (std::size_t k = 0; k < a.theta.size(); ++k)
        if (!bits_equal(a.theta[k], b.theta[k])) return false;
    if (a.movement.size() != b.movement.size()) return false;
    for (std::size_t k = 0; k < a.movement.size(); ++k)
        if (std::memcmp(&a.movement[k], &b.movement[k], sizeof(double)) != 0) return false;
    if (a.bundles.size() != b.bundles.size()) return false;
    for (std::size_t k = 0; k < a.bundles.size(); ++k) {
        if (a.bundles[k].owner != b.bundles[k].owner ||
            a.bundles[k].stamp != b.bundles[k].stamp ||
            a.bundles[k].columns.size() != b.bundles[k].columns.size())
            return false;
        for (std::size_t c = 0; c < a.bundles[k].columns.size(); ++c)
            if (!same_column(a.bundles[k].columns[c], b.bundles[k].columns[c])) return false;
    }
    return true;
}

}  // namespace detail

[[nodiscard]] inline Json make_reports(const Scenario& s, const TraceLog& tr) {
    Json j;
    j["scenario"] = tr.scenario;
    j["algorithm"] = tr.algorithm;
    const StabilityReport st = stability_report(tr, s.t_stop);
    j["stability"] = {{"sup_x", st.sup_x},       {"sup_u", st.sup_u},
                      {"lambda", st.lambda},     {"diverged", st.diverged},
                      {"blowup_time", st.blowup_time}, {"fit_begin", st.fit_begin},
                      {"fit_end", st.fit_end}};
    if (!tr.theta.empty()) {
        const NetworkTopology& t = s.topology;
        const DelayTable dt = delay_table(t);
        const NeighborSets ns = neighbor_sets(t, dt, s.dbar);
        const IdentityReport ir = verify_closed_loop_identity(t, dt, ns, tr);
        j["identity"] = {{"max_state_residual", ir.max_state_residual},
                         {"max_input_residual", ir.max_input_residual},
                         {"max_model_residual", ir.max_model_residual}};
        const ErrorSeries es = compute_error_series(t, dt, ns, tr);
        const detail::EnvelopeCheck ec = detail::envelope_check(s, tr, es);
        j["error_total"] = es.total;
        j["movement_total"] = tr.movement.empty() ? 0.0 : tr.movement.back();
        j["envelope"] = {{"s0", ec.s0},
                         {"noise", s.w_assumed},
                         {"mass", ec.mass},
                         {"sup_what", ec.sup_what},
                         {"dominates", ec.dominated}};
    }
    return j;
}

// -----------------------------------------------------------------------------
// Commands.
// -----------------------------------------------------------------------------

namespace detail {

struct RunOutcome {
    int code = kExitOk;
    std::string message;
};

[[nodiscard]] inline RunOutcome run_one_scenario(const std::filesystem::path& path,
                                                 const std::filesystem::path& out_dir) {
    Scenario s;
    try {
        s = load_scenario(path);
    } catch (const NetstabError& e) {
        return {kExitLoad, path.string() + ": " + e.what()};
    }
    log_debug("loaded " + s.name + " from " + path.string());
    TraceLog tr;
    try {
        tr = run_episode(s);
    } catch (const InconsistencyError& e) {
        return {kExitInconsistent, s.name + ": " + e.what()};
    } catch (const SynthesisError& e) {
        return {kExitSynthesis, s.name + ": " + e.what()};
    } catch (const NumericError& e) {
        return {kExitSynthesis, s.name + ": " + e.what()};
    } catch (const CausalityError& e) {
        return {kExitSynthesis, s.name + ": " + e.what()};
    } catch (const NetstabError& e) {
        return {kExitLoad, s.name + ": " + e.what()};
    }
    const Json reports = make_reports(s, tr);
    try {
        write_run_dir(out_dir, s, tr, reports);
    } catch (const NetstabError& e) {
        return {kExitLoad, e.what()};
    }
    const bool diverged = reports.at("stability").at("diverged").get<bool>();
    RunOutcome out;
    out.code = diverged ? kExitVerdict : kExitOk;
    out.message = s.name + ": " + std::to_string(tr.steps) + " steps, sup_x " +
                  short_num(reports.at("stability").at("sup_x").get<double>()) +
                  (diverged ? ", DIVERGED" : "") + " -> " + out_dir.string();
    return out;
}

}  // namespace detail

[[nodiscard]] inline int cmd_run(const std::vector<std::string>& scenario_paths,
                                 const std::string& out_dir, int jobs) {
    if (scenario_paths.empty()) {
        std::cerr << "run: no scenario files given\n";
        return kExitUsage;
    }
    if (jobs < 1) {
        std::cerr << "run: --jobs must be positive\n";
        return kExitUsage;
    }
    std::vector<std::filesystem::path> in;
    for (const auto& p : scenario_paths) {
        if (!std::filesystem::exists(p)) {
            std::cerr << "run: no such file " << p << '\n';
            return kExitUsage;
        }
        in.emplace_back(p);
    }
    const std::filesystem::path base(out_dir);
    std::vector<std::filesystem::path> out;
    if (in.size() == 1) {
        out.push_back(base);
    } else {
        for (const auto& p : in) {
            const std::filesystem::path dst = base / p.stem();
            for (const auto& prev : out)
                if (prev == dst) {
                    std::cerr << "run: scenario stem '" << p.stem().string()
                              << "' is not unique\n";
                    return kExitUsage;
                }
            out.push_back(dst);
        }
    }

    std::vector<detail::RunOutcome> outcomes(in.size());
    if (jobs == 1 || in.size() == 1) {
        for (std::size_t k = 0; k < in.size(); ++k)
            outcomes[k] = detail::run_one_scenario(in[k], out[k]);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            while (true) {
                const std::size_t k = next.fetch_add(1);
                if (k >= in.size()) return;
                outcomes[k] = detail::run_one_scenario(in[k], out[k]);
            }
        };
        std::vector<std::thread> pool;
        const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), in.size());
        for (std::size_t k = 0; k < workers; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    int code = kExitOk;
    for (const auto& oc : outcomes) {
        if (oc.code == kExitOk)
            log_info(oc.message);
        else
            std::cerr << oc.message << '\n';
        code = std::max(code, oc.code);
    }
    return code;
}

[[nodiscard]] inline int cmd_verify(const std::string& dir_arg, std::ostream& out) {
    const std::filesystem::path dir(dir_arg);
    if (!std::filesystem::exists(dir)) {
        std::cerr << "verify: no such directory " << dir_arg << '\n';
        return kExitUsage;
    }
    RunDir rd;
    try {
        rd = read_run_dir(dir);
    } catch (const NetstabError& e) {
        std::cerr << "verify: " << e.what() << '\n';
        return kExitLoad;
    }

    struct Row {
        std::string check, result, detail;
    };
    std::vector<Row> rows;
    bool failed = false;
    auto add = [&](const std::string& c, bool pass, const std::string& d) {
        rows.push_back({c, pass ? "pass" : "FAIL", d});
        failed = failed || !pass;
    };
    auto skip = [&](const std::string& c, const std::string& d) {
        rows.push_back({c, "skipped", d});
    };

    try {
        const TraceLog fresh = run_episode(rd.scenario);
        add("replay", detail::same_run(fresh, rd.trace),
            detail::same_run(fresh, rd.trace) ? "bit-identical re-run"
                                              : "re-run disagrees with the stored trace");
    } catch (const NetstabError& e) {
        add("replay", false, e.what());
    }

    if (!rd.trace.theta.empty()) {
        const NetworkTopology& t = rd.scenario.topology;
        const DelayTable dt = delay_table(t);
        const NeighborSets ns = neighbor_sets(t, dt, rd.scenario.dbar);
        try {
            const IdentityReport ir = verify_closed_loop_identity(t, dt, ns, rd.trace);
            add("state identity", ir.max_state_residual <= 1e-7,
                "max residual " + detail::short_num(ir.max_state_residual));
            add("input identity", ir.max_input_residual <= 1e-7,
                "max residual " + detail::short_num(ir.max_input_residual));
            add("model recursion", ir.max_model_residual <= rd.scenario.w_assumed + 1e-7,
                "max residual " + detail::short_num(ir.max_model_residual) + " vs bound " +
                    detail::short_num(rd.scenario.w_assumed));
            const ErrorSeries es = compute_error_series(t, dt, ns, rd.trace);
            const detail::EnvelopeCheck ec = detail::envelope_check(rd.scenario, rd.trace, es);
            add("envelope dominance", ec.dominated,
                "sup estimate " + detail::short_num(ec.sup_what) + ", drift mass " +
                    detail::short_num(ec.mass));
        } catch (const NetstabError& e) {
            add("trace analysis", false, e.what());
        }
    } else {
        skip("state identity", "run kept no model trace");
        skip("input identity", "run kept no model trace");
        skip("model recursion", "run kept no model trace");
        skip("envelope dominance", "run kept no model trace");
    }

    out << "check               result   detail\n";
    for (const auto& r : rows) {
        out << r.check;
        for (std::size_t k = r.check.size(); k < 20; ++k) out << ' ';
        out << r.result;
        for (std::size_t k = r.result.size(); k < 9; ++k) out << ' ';
        out << r.detail << '\n';
    }
    out << (failed ? "verification FAILED for " : "verification passed for ") << rd.trace.scenario
        << '\n';
    return failed ? kExitVerdict : kExitOk;
}

[[nodiscard]] inline int cmd_probe(const std::string& scenario_path, int trials,
                                   std::ostream& out) {
    if (trials < 1) {
        std::cerr << "probe: --trials must be positive\n";
        return kExitUsage;
    }
    if (!std::filesystem::exists(scenario_path)) {
        std::cerr << "probe: no such file " << scenario_path << '\n';
        return kExitUsage;
    }
    Scenario s;
    try {
        s = load_scenario(scenario_path);
    } catch (const NetstabError& e) {
        std::cerr << "probe: " << e.what() << '\n';
        return kExitLoad;
    }
    const NetworkTopology& t = s.topology;
    const ProbeReport rep =
        fir_feasibility_probe(t, s.theta_lo, s.theta_hi, s.dbar, s.horizon_h, trials, s.seed);

    // Family bounds over the same draw sequence the probe used.
    Rng rng(seed_child(s.seed, kSeedProbe));
    SetBounds sb;
    sb.sigma_u_min = std::numeric_limits<double>::infinity();
    std::vector<Vec> thetas(static_cast<std::size_t>(t.count()));
    for (int trial = 0; trial < trials; ++trial) {
        for (int i = 0; i < t.count(); ++i) {
            const Vec& l = s.theta_lo[static_cast<std::size_t>(i)];
            const Vec& h = s.theta_hi[static_cast<std::size_t>(i)];
            Vec th(l.size());
            for (int k = 0; k < l.size(); ++k) {
                if (trial % 2 == 0)
                    th(k) = rng.next_u64() & 1 ? h(k) : l(k);
                else
                    th(k) = rng.uniform(l(k), h(k));
            }
            thetas[static_cast<std::size_t>(i)] = th;
        }
        const GlobalDynamics m = assemble_global(t, thetas);
        const GrammianReport gr = controllability_grammians(m.A, m.B, s.horizon_h);
        sb.sigma_u_min = std::min(sb.sigma_u_min, gr.sigma_min_u);
        sb.sigma_u_max = std::max(sb.sigma_u_max, gr.sigma_max_u);
        sb.sigma_w_max = std::max(sb.sigma_w_max, gr.sigma_max_w);
        sb.alpha_H = std::max(sb.alpha_H, gr.alpha_H);
        sb.beta = std::max(sb.beta, operator_norm(m.B));
    }

    Json j;
    j["scenario"] = s.name;
    j["trials"] = rep.trials;
    j["failures"] = rep.failures;
    j["pass_rate"] = rep.pass_rate;
    j["worst_witness"] = rep.worst_witness.empty() ? Json() : Json(rep.worst_witness);
    j["decay"] = {{"coeff", rep.decay.coeff}, {"rate", rep.decay.rate}};
    j["family_bounds"] = {{"sigma_u_min", sb.sigma_u_min}, {"sigma_u_max", sb.sigma_u_max},
                          {"sigma_w_max", sb.sigma_w_max}, {"alpha_H", sb.alpha_H},
                          {"beta", sb.beta}};
    const Mat Q = s.Q.size() ? s.Q : Mat(Mat::Identity(t.total_states, t.total_states));
    const Mat R = s.R.size() ? s.R : Mat(Mat::Identity(t.total_inputs, t.total_inputs));
    try {
        const SensitivityConstants sc = sensitivity_constants(sb, Q, R, s.horizon_h);
        j["sensitivity"] = {{"gamma_a", sc.gamma_a},
                            {"gamma_b", sc.gamma_b},
                            {"kappa_cd", sc.kappa_cd},
                            {"gamma_1", sc.gamma_1},
                            {"gamma_2", sc.gamma_2}};
    } catch (const NetstabError& e) {
        j["sensitivity"] = Json();
        j["sensitivity_note"] = e.what();
    }
    out << j.dump(2) << '\n';
    return kExitOk;
}

[[nodiscard]] inline int cmd_compare(const std::string& dir_a, const std::string& dir_b,
                                     const std::string& out_path, std::ostream& out) {
    for (const auto* d : {&dir_a, &dir_b}) {
        if (!std::filesystem::exists(*d)) {
            std::cerr << "compare: no such directory " << *d << '\n';
            return kExitUsage;
        }
    }
    RunDir a, b;
    try {
        a = read_run_dir(dir_a);
        b = read_run_dir(dir_b);
    } catch (const NetstabError& e) {
        std::cerr << "compare: " << e.what() << '\n';
        return kExitLoad;
    }
    const NetworkTopology& ta = a.scenario.topology;
    const NetworkTopology& tb = b.scenario.topology;
    bool same_shape = ta.count() == tb.count() && ta.total_states == tb.total_states &&
                      ta.total_inputs == tb.total_inputs;
    for (int i = 0; same_shape && i < ta.count(); ++i)
        same_shape = ta.state_dim(i) == tb.state_dim(i) && ta.input_dim(i) == tb.input_dim(i);
    if (!same_shape) {
        std::cerr << "compare: the runs disagree on the network shape\n";
        return kExitLoad;
    }
    if (!a.trace.theta.empty() && !b.trace.theta.empty() &&
        (a.scenario.dbar != b.scenario.dbar || a.scenario.horizon_h != b.scenario.horizon_h)) {
        std::cerr << "compare: the runs disagree on locality or horizon\n";
        return kExitLoad;
    }

    const DelayTable dt = delay_table(ta);
    const NeighborSets ns = neighbor_sets(ta, dt, a.scenario.dbar);
    const RunComparison c = compare_runs(ta, dt, ns, a.trace, b.trace);

    std::ostringstream csv;
    csv << "metric,run_a,run_b\n";
    csv << "sup_x," << format_g17(c.sup_x_a) << ',' << format_g17(c.sup_x_b) << '\n';
    csv << "sup_u," << format_g17(c.sup_u_a) << ',' << format_g17(c.sup_u_b) << '\n';
    csv << "movement," << format_g17(c.movement_a) << ',' << format_g17(c.movement_b) << '\n';
    csv << "error_total," << format_g17(c.error_total_a) << ',' << format_g17(c.error_total_b)
        << '\n';
    csv << "peak_ratio," << format_g17(c.peak_ratio) << '\n';
    if (out_path.empty()) {
        out << csv.str();
    } else {
        try {
            write_text_file(out_path, csv.str());
        } catch (const NetstabError& e) {
            std::cerr << "compare: " << e.what() << '\n';
            return kExitLoad;
        }
    }
    return kExitOk;
}

}  // namespace netstab
