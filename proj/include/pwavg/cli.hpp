#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pwavg/averaging.hpp"
#include "pwavg/examples.hpp"
#include "pwavg/lsreduction.hpp"
#include "pwavg/model.hpp"
#include "pwavg/roots.hpp"
#include "pwavg/verify.hpp"
#include "pwavg/version.hpp"

// Command implementations behind the command-line tool.  Exit codes:
//   0  requested stages completed (zeros found when zeros were the goal)
//   1  I/O, schema, or expansion errors
//   2  hypothesis validation failed
//   3  no certified zeros found (informational)
//   4  eps-sweep verification failed for a certified zero
// Everything the commands print is reproducible: grids, sampling, and
// orderings are deterministic.

namespace pwavg::cli {

using linalg::Vec;
using nlohmann::json;

inline int log_level() {
    static const int level = [] {
        const char* env = std::getenv("PWAVG_LOG");
        if (!env) return 1;
        std::string s(env);
        if (s == "quiet" || s == "0") return 0;
        if (s == "debug" || s == "2") return 2;
        return 1;
    }();
    return level;
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[pwavg] " << msg << "\n";
}

inline std::string fnv1a64_hex(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

// Chunked parallel map over [0, n); deterministic because each index writes
// only its own slot.
template <typename Fn>
inline void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min<std::size_t>(jobs, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = static_cast<std::size_t>(w); i < n;
                     i += static_cast<std::size_t>(workers))
                    fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (std::thread& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Analysis report
// ---------------------------------------------------------------------------

struct OrderGrid {
    int order = 0;
    std::vector<Vec> alphas;
    std::vector<Vec> values;
    double max_abs = 0.0;
    bool identically_zero = false;
};

struct AnalysisReport {
    std::string config_path;
    std::string digest;
    std::string tool_version = kVersion;
    int m = 0, k = 0, d = 0, zones = 0;
    double period = 0.0;
    int requested_order = 0;
    int grid_resolution = 0;
    model::AnalysisOptions options;
    model::HypothesisReport hypothesis;
    std::vector<OrderGrid> grids;
    int effective_order = 0;  // 0 when every requested order vanishes on V
    std::vector<roots::ZeroCertificate> zeros;
    std::vector<verify::VerificationRecord> verifications;
    double wall_seconds = 0.0;
    int exit_code = 0;
};

inline json to_json(const model::HypothesisReport& h) {
    json samples = json::array();
    for (const auto& s : h.samples) {
        json row;
        row["alpha"] = s.alpha;
        if (s.ok()) {
            row["periodicity_residual"] = s.periodicity_residual;
            if (!std::isnan(s.abs_det_delta)) row["abs_det_delta"] = s.abs_det_delta;
        } else {
            row["error"] = s.error;
        }
        samples.push_back(std::move(row));
    }
    return json{{"samples", samples},
                {"max_periodicity_residual", h.max_periodicity_residual},
                {"min_abs_det_delta", h.min_abs_det_delta},
                {"hb_pass", h.hb_pass},
                {"delta_pass", h.delta_pass},
                {"failures", h.failures}};
}

inline json to_json(const roots::ZeroCertificate& c) {
    json j;
    j["alpha"] = c.alpha_star;
    j["residual"] = c.residual;
    j["status"] = roots::to_string(c.status);
    j["iterations"] = c.iterations;
    if (c.jacobian.rows() > 0) {
        std::vector<std::vector<double>> rows;
        for (int r = 0; r < c.jacobian.rows(); ++r) {
            rows.emplace_back();
            for (int col = 0; col < c.jacobian.cols(); ++col)
                rows.back().push_back(c.jacobian(r, col));
        }
        j["jacobian"] = rows;
        j["det_jacobian"] = c.det_jacobian;
        j["condition_estimate"] = c.condition_estimate;
    }
    if (!c.note.empty()) j["note"] = c.note;
    return j;
}

inline json to_json(const verify::VerificationRecord& r) {
    json j;
    j["alpha"] = r.alpha_star;
    j["z_alpha"] = r.z_alpha;
    j["eps"] = r.eps_list;
    j["distances"] = r.distances;
    j["residuals"] = r.residuals;
    json zs = json::array();
    for (const auto& z : r.z_eps) zs.push_back(z);
    j["z_eps"] = zs;
    if (r.slope_valid) j["slope"] = r.slope;
    j["orbit_eps_independent"] = r.orbit_eps_independent;
    j["passed"] = r.passed;
    if (!r.failure.empty()) j["failure"] = r.failure;
    return j;
}

inline json to_json(const AnalysisReport& rep) {
    json j;
    j["schema_version"] = 1;
    j["tool_version"] = rep.tool_version;
    j["config"] = {{"path", rep.config_path}, {"digest", rep.digest},     {"m", rep.m},
                   {"k", rep.k},              {"d", rep.d},               {"zones", rep.zones},
                   {"T", rep.period}};
    const model::AnalysisOptions& o = rep.options;
    j["tolerances"] = {{"rel_tol", o.rel_tol},
                       {"abs_tol", o.abs_tol},
                       {"periodicity_tol", o.periodicity_tol},
                       {"degeneracy_floor", o.degeneracy_floor},
                       {"zero_floor", o.zero_floor},
                       {"newton_tol", o.newton_tol},
                       {"simple_zero_floor", o.simple_zero_floor},
                       {"verify_tol", o.verify_tol},
                       {"eps_bound", o.eps_bound}};
    j["requested_order"] = rep.requested_order;
    j["grid_resolution"] = rep.grid_resolution;
    j["hypothesis"] = to_json(rep.hypothesis);
    json orders = json::array();
    for (const OrderGrid& g : rep.grids) {
        json og;
        og["order"] = g.order;
        og["max_abs"] = g.max_abs;
        og["identically_zero"] = g.identically_zero;
        og["alphas"] = g.alphas;
        og["values"] = g.values;
        orders.push_back(std::move(og));
    }
    j["orders"] = std::move(orders);
    j["effective_order"] = rep.effective_order;
    json zeros = json::array();
    for (const auto& c : rep.zeros) zeros.push_back(to_json(c));
    j["zeros"] = std::move(zeros);
    json ver = json::array();
    for (const auto& r : rep.verifications) ver.push_back(to_json(r));
    j["verification"] = std::move(ver);
    j["timings"] = {{"total_seconds", rep.wall_seconds}};
    j["exit_code"] = rep.exit_code;
    return j;
}

// CSV of the effective-order grid: alpha coordinates, then the f components.
inline void write_grid_csv(const AnalysisReport& rep, std::ostream& os) {
    const OrderGrid* grid = nullptr;
    for (const OrderGrid& g : rep.grids)
        if (g.order == rep.effective_order) grid = &g;
    if (!grid && !rep.grids.empty()) grid = &rep.grids.back();
    if (!grid) return;
    const std::size_t d = grid->alphas.empty() ? 0 : grid->alphas.front().size();
    const std::size_t p = grid->values.empty() ? 0 : grid->values.front().size();
    for (std::size_t i = 0; i < d; ++i) os << (i ? "," : "") << "alpha_" << (i + 1);
    for (std::size_t i = 0; i < p; ++i) os << ",f_" << (i + 1);
    os << "\n";
    for (std::size_t row = 0; row < grid->alphas.size(); ++row) {
        for (std::size_t i = 0; i < d; ++i)
            os << (i ? "," : "") << expr::detail::format_double(grid->alphas[row][i]);
        for (std::size_t i = 0; i < p; ++i)
            os << ',' << expr::detail::format_double(grid->values[row][i]);
        os << "\n";
    }
}

inline void write_table(const AnalysisReport& rep, std::ostream& os) {
    os << "pwavg " << rep.tool_version << "  |  " << rep.config_path << "  (digest "
       << rep.digest << ")\n";
    os << "system: m=" << rep.m << " k=" << rep.k << " zones=" << rep.zones
       << " T=" << rep.period << "  manifold: d=" << rep.d << "\n\n";
    os << "hypotheses: max |x(T)-z| = " << rep.hypothesis.max_periodicity_residual;
    if (rep.d < rep.m) os << ", min |det Delta| = " << rep.hypothesis.min_abs_det_delta;
    os << "  ->  " << (rep.hypothesis.pass() ? "PASS" : "FAIL") << "\n\n";
    for (const OrderGrid& g : rep.grids) {
        os << "order " << g.order << ": max |f_" << g.order << "| = " << g.max_abs;
        if (g.identically_zero)
            os << "  (identically zero on V at the working floor)";
        os << "\n";
    }
    if (rep.effective_order == 0) {
        os << "\nno usable bifurcation order on V\n";
    } else {
        os << "\nzeros of f_" << rep.effective_order << ":\n";
        if (rep.zeros.empty()) os << "  none found\n";
        for (const auto& c : rep.zeros) {
            os << "  alpha* = (";
            for (std::size_t i = 0; i < c.alpha_star.size(); ++i)
                os << (i ? ", " : "") << c.alpha_star[i];
            os << ")  |f| = " << c.residual << "  det Df = " << c.det_jacobian << "  ["
               << roots::to_string(c.status) << "]\n";
        }
    }
    for (const auto& v : rep.verifications) {
        os << "verify alpha* = (";
        for (std::size_t i = 0; i < v.alpha_star.size(); ++i)
            os << (i ? ", " : "") << v.alpha_star[i];
        os << "): ";
        if (!v.failure.empty()) {
            os << "FAILED (" << v.failure << ")\n";
            continue;
        }
        if (v.orbit_eps_independent)
            os << "orbit independent of eps to resolution";
        else
            os << "slope = " << v.slope;
        os << "  ->  " << (v.passed ? "PASS" : "FAIL") << "\n";
    }
    os << "\nelapsed: " << rep.wall_seconds << " s\n";
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string config_path;
    int order = 0;  // 0 = use config
    int grid = 0;   // 0 = use config
    bool verify = false;
    bool expect_zeros = false;
    std::string out_path;
    std::string format = "table";  // table | json | csv
    int jobs = 1;
    std::string debug_dump;  // directory for augmented-path CSV dumps
};

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<Vec> make_grid(const model::ManifoldChart& chart, int resolution) {
    const int d = chart.d;
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(resolution);
    std::vector<Vec> alphas(total, Vec(static_cast<std::size_t>(d)));
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rest = flat;
        for (int i = d - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(rest % static_cast<std::size_t>(resolution));
            rest /= static_cast<std::size_t>(resolution);
        }
        for (int i = 0; i < d; ++i)
            alphas[flat][i] =
                chart.lower[i] + (chart.upper[i] - chart.lower[i]) * idx[i] / (resolution - 1);
    }
    return alphas;
}

inline void emit_report(const AnalysisReport& rep, const AnalyzeArgs& args, std::ostream& out) {
    std::ofstream file;
    std::ostream* os = &out;
    if (!args.out_path.empty()) {
        file.open(args.out_path, std::ios::binary);
        if (!file) throw Error("cannot write '" + args.out_path + "'");
        os = &file;
    }
    if (args.format == "json")
        *os << to_json(rep).dump(2) << "\n";
    else if (args.format == "csv")
        write_grid_csv(rep, *os);
    else
        write_table(rep, *os);
}

}  // namespace detail

inline int run_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
    const auto t_start = std::chrono::steady_clock::now();
    AnalysisReport rep;
    rep.config_path = args.config_path;

    model::LoadedModel lm;
    try {
        std::string text = detail::read_file(args.config_path);
        rep.digest = fnv1a64_hex(text);
        lm = model::load_system(text);
        if (args.order > 0) {
            if (args.order > lm.system.order)
                throw ConfigError("requested order exceeds the system order k", "analysis.order");
            lm.options.order = args.order;
        }
        if (args.grid > 0) {
            if (args.grid < 2) throw ConfigError("grid must be >= 2", "analysis.grid");
            lm.options.grid = args.grid;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    const model::PiecewiseSystem& sys = lm.system;
    const model::ManifoldChart& chart = lm.chart;
    rep.m = sys.m;
    rep.k = sys.order;
    rep.d = chart.d;
    rep.zones = sys.zone_count();
    rep.period = sys.period;
    rep.requested_order = lm.options.order;
    rep.grid_resolution = lm.options.grid;
    rep.options = lm.options;

    auto finish = [&](int code) {
        rep.exit_code = code;
        rep.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        try {
            detail::emit_report(rep, args, out);
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            return 1;
        }
        return code;
    };

    try {
        log_debug("validating hypotheses");
        rep.hypothesis =
            model::validate_hypotheses(sys, chart, lm.options.hypothesis_samples, lm.options);
        if (!rep.hypothesis.pass()) {
            err << "error: hypothesis validation failed (max periodicity residual "
                << rep.hypothesis.max_periodicity_residual << ", min |det Delta| "
                << rep.hypothesis.min_abs_det_delta << ")\n";
            return finish(2);
        }

        averaging::Engine engine(sys, lm.options.order, odeint::tolerances_of(lm.options));
        lsred::AssemblyOptions asm_opt;
        asm_opt.degeneracy_floor = lm.options.degeneracy_floor;
        lsred::Assembler assembler(engine, chart, asm_opt);

        std::vector<Vec> alphas = detail::make_grid(chart, lm.options.grid);
        for (int i = 1; i <= lm.options.order; ++i) {
            log_debug("evaluating f_" + std::to_string(i) + " on the grid");
            OrderGrid grid;
            grid.order = i;
            grid.alphas = alphas;
            grid.values.assign(alphas.size(), Vec());
            parallel_for(alphas.size(), args.jobs, [&](std::size_t row) {
                grid.values[row] = assembler.assemble(alphas[row], i).f[static_cast<std::size_t>(i) - 1];
            });
            for (const Vec& v : grid.values)
                grid.max_abs = std::max(grid.max_abs, linalg::norm_inf(v));
            grid.identically_zero = grid.max_abs < lm.options.zero_floor;
            rep.grids.push_back(std::move(grid));
            if (!rep.grids.back().identically_zero) {
                rep.effective_order = i;
                break;
            }
        }

        if (rep.effective_order == 0) {
            err << (args.expect_zeros ? "error" : "note")
                << ": every requested order vanishes on V (floor " << lm.options.zero_floor
                << "); nothing to certify\n";
            return finish(3);
        }

        const int eff = rep.effective_order;
        roots::VecFn f = [&](std::span<const double> a) {
            return assembler.assemble(a, eff).f[static_cast<std::size_t>(eff) - 1];
        };
        roots::NewtonOptions nopt;
        nopt.tol = lm.options.newton_tol;
        nopt.simple_zero_floor = lm.options.simple_zero_floor;
        log_debug("scanning for zeros");
        rep.zeros = roots::find_zeros(f, chart.lower, chart.upper, lm.options.grid, nopt);

        int certified = 0;
        for (const auto& c : rep.zeros)
            if (c.certified()) ++certified;

        if (!args.debug_dump.empty()) {
            int index = 0;
            for (const auto& c : rep.zeros) {
                Vec z = chart.point(c.alpha_star, sys.m);
                averaging::AveragedResult avg = engine.averaged_functions(z);
                const std::string path = args.debug_dump + "/augmented_zero" +
                                         std::to_string(index++) + ".csv";
                std::ofstream dump(path);
                if (!dump)
                    err << "warning: cannot write '" << path << "'\n";
                else
                    avg.path.to_csv(dump);
            }
        }

        bool verify_failed = false;
        if (args.verify && certified > 0) {
            verify::VerifyOptions vopt = verify::verify_options_of(lm.options);
            for (const auto& c : rep.zeros) {
                if (!c.certified()) continue;
                log_debug("verifying O(eps) convergence at a certified zero");
                rep.verifications.push_back(verify::convergence_order(
                    sys, chart, c.alpha_star, lm.options.eps_list, vopt));
                if (!rep.verifications.back().passed) verify_failed = true;
            }
        }

        if (certified == 0) {
            err << (args.expect_zeros ? "error" : "note") << ": no certified zeros of f_" << eff
                << " on V\n";
            return finish(3);
        }
        if (verify_failed) {
            err << "error: eps-sweep verification failed\n";
            return finish(4);
        }
        return finish(0);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return finish(1);
    }
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

inline int run_oracle(const std::string& name, double lo, double hi, int n, int jobs,
                      std::ostream& out, std::ostream& err) {
    const examples::ExampleEntry* entry = examples::find_example(name);
    if (!entry) {
        err << "error: unknown example '" << name << "'\n";
        return 1;
    }
    if (!entry->oracle) {
        err << "error: example '" << name << "' has no closed-form oracle\n";
        return 1;
    }
    model::LoadedModel lm = model::load_system(entry->config);
    if (lo == 0.0 && hi == 0.0) {
        lo = lm.chart.lower[0];
        hi = lm.chart.upper[0];
    }
    if (n < 2) n = 20;

    averaging::Engine engine(lm.system, entry->oracle_order, odeint::tolerances_of(lm.options));
    lsred::Assembler assembler(engine, lm.chart, {});

    std::vector<double> alphas(static_cast<std::size_t>(n));
    std::vector<double> engine_vals(alphas.size()), oracle_vals(alphas.size());
    for (int i = 0; i < n; ++i) alphas[i] = lo + (hi - lo) * i / (n - 1);
    parallel_for(alphas.size(), jobs, [&](std::size_t i) {
        Vec a{alphas[i]};
        engine_vals[i] =
            assembler.assemble(a, entry->oracle_order).f[static_cast<std::size_t>(entry->oracle_order) - 1][0];
        oracle_vals[i] = entry->oracle(alphas[i], lm.system.params);
    });

    double max_abs_err = 0.0, max_oracle = 0.0;
    out << "alpha,engine,oracle,abs_error\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        double diff = std::abs(engine_vals[i] - oracle_vals[i]);
        max_abs_err = std::max(max_abs_err, diff);
        max_oracle = std::max(max_oracle, std::abs(oracle_vals[i]));
        out << expr::detail::format_double(alphas[i]) << ','
            << expr::detail::format_double(engine_vals[i]) << ','
            << expr::detail::format_double(oracle_vals[i]) << ','
            << expr::detail::format_double(diff) << "\n";
    }
    const double rel = max_oracle > 0.0 ? max_abs_err / max_oracle : max_abs_err;
    out << "# f_" << entry->oracle_order << ", max abs error " << max_abs_err
        << ", normwise relative " << rel << ", tolerance " << entry->oracle_tolerance << "\n";
    if (rel > entry->oracle_tolerance) {
        err << "error: oracle comparison outside tolerance\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

inline int run_expand(const std::string& config_path, int check_points, std::ostream& out,
                      std::ostream& err) {
    model::LoadedModel lm;
    try {
        lm = model::load_system(detail::read_file(config_path));
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    const model::PiecewiseSystem& sys = lm.system;
    bool any_full = false;
    for (const auto& zone : sys.zones) any_full |= zone.has_full();
    if (!any_full) {
        err << "error: config has no rhs_full zones to expand\n";
        return 1;
    }

    for (int j = 0; j < sys.zone_count(); ++j) {
        const model::Zone& zone = sys.zones[static_cast<std::size_t>(j)];
        if (!zone.has_full()) continue;
        out << "zone " << j << "  [" << expr::detail::format_double(sys.switch_times[j]) << ", "
            << expr::detail::format_double(sys.switch_times[j + 1]) << "]\n";
        for (int i = 0; i <= sys.order; ++i) {
            out << "  order " << i << ":\n";
            for (int c = 0; c < sys.m; ++c)
                out << "    F_" << i << "[" << (c + 1)
                    << "] = " << expr::to_string(zone.rhs[static_cast<std::size_t>(i)][c]) << "\n";
        }
    }

    if (check_points > 0) {
        std::mt19937_64 rng(0xABCDEFULL);
        const double eps = 1e-6;
        double max_resid = 0.0;
        std::vector<double> env = sys.make_env();
        for (int p = 0; p < check_points; ++p) {
            std::uniform_real_distribution<double> ut(0.0, sys.period);
            env[0] = ut(rng);
            Vec alpha(static_cast<std::size_t>(lm.chart.d));
            for (int i = 0; i < lm.chart.d; ++i) {
                std::uniform_real_distribution<double> ua(lm.chart.lower[i], lm.chart.upper[i]);
                alpha[i] = ua(rng);
            }
            Vec z = lm.chart.point(alpha, sys.m);
            for (int c = 0; c < sys.m; ++c) {
                std::uniform_real_distribution<double> uz(-0.1, 0.1);
                env[static_cast<std::size_t>(1 + c)] = z[c] * (1.0 + uz(rng));
            }
            env[static_cast<std::size_t>(sys.eps_slot())] = eps;
            const int j = sys.zone_index(env[0]);
            const model::Zone& zone = sys.zones[static_cast<std::size_t>(j)];
            if (!zone.has_full()) continue;
            for (int c = 0; c < sys.m; ++c) {
                double full = zone.full_compiled[static_cast<std::size_t>(c)].eval(env);
                double acc = zone.rhs_compiled[static_cast<std::size_t>(sys.order * sys.m + c)].eval(env);
                for (int i = sys.order - 1; i >= 0; --i)
                    acc = zone.rhs_compiled[static_cast<std::size_t>(i * sys.m + c)].eval(env) +
                          eps * acc;
                max_resid = std::max(max_resid, std::abs(full - acc));
            }
        }
        out << "# truncation residual at eps = " << eps << " over " << check_points
            << " random points: " << max_resid << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// examples
// ---------------------------------------------------------------------------

inline int run_examples(const std::string& emit_name, std::ostream& out, std::ostream& err) {
    if (emit_name.empty()) {
        for (const auto& entry : examples::builtin_examples())
            out << entry.name << "  -  " << entry.description << "\n";
        return 0;
    }
    const examples::ExampleEntry* entry = examples::find_example(emit_name);
    if (!entry) {
        err << "error: unknown example '" << emit_name << "'\n";
        return 1;
    }
    out << entry->config;
    return 0;
}

}  // namespace pwavg::cli
