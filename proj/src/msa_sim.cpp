#include "tender/msa_sim.hpp"

#include <algorithm>
#include <bit>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tender/detail/accumulator.hpp"
#include "tender/errors.hpp"
#include "tender/qgemm.hpp"

namespace tender::msa {

using detail::Accumulator;

StreamSchedule StreamSchedule::implicit(const ChunkPlan& chunk, int alpha)
{
    StreamSchedule s;
    s.alpha = alpha;
    const int groups = chunk.ladder.num_groups;
    for (int g = 1; g <= groups; ++g) {
        if (g > 1) {
            s.rescale_positions.push_back(s.slots.size());
            s.slots.push_back({true, 0});
        }
        for (Index k : chunk.group_channels(g)) {
            s.slots.push_back({false, k});
            s.channels.push_back(k);
        }
    }
    return s;
}

StreamSchedule StreamSchedule::group_only(const ChunkPlan& chunk, int group)
{
    StreamSchedule s;
    for (Index k : chunk.group_channels(group)) {
        s.slots.push_back({false, k});
        s.channels.push_back(k);
    }
    return s;
}

const std::vector<RescaleEvent>& trace_rescale_events(const SimReport& report)
{
    if (!report.trace)
        throw std::logic_error("trace_rescale_events: simulation ran without tracing");
    return *report.trace;
}

namespace {

struct Token {
    bool valid = false;
    bool rescale = false;
    std::int64_t value = 0;
};

struct Tile {
    Index row0, rows, col0, cols, chunk;
};

/// Per-run state shared by the implicit and explicit drivers.
struct Machine {
    const MSAConfig& cfg;
    Index eff_rows = 0, eff_cols = 0;
    SimReport report;
    std::uint64_t cycle = 0;

    explicit Machine(const MSAConfig& c) : cfg(c) {}

    /// Streams `sched` through an r' x c' tile, updating `acc` (row-major over
    /// the tile). Returns the number of cycles until the last PE consumed its
    /// last slot; the global clock is not advanced.
    std::uint64_t stream(const StreamSchedule& sched, const IntMatrix& a, const IntMatrix& w, const Tile& t,
                         std::vector<Accumulator>& acc)
    {
        const Index rn = t.rows, cn = t.cols, len = sched.slots.size();
        std::vector<Token> a_reg(rn * cn), w_reg(rn * cn);
        std::uint64_t last_active = 0;
        bool any = false;
        const std::uint64_t horizon = len + rn + cn;

        for (std::uint64_t tc = 0; tc < horizon; ++tc) {
            for (Index r = rn; r-- > 0;) {
                for (Index c = cn; c-- > 0;) {
                    Token& at = a_reg[r * cn + c];
                    Token& wt = w_reg[r * cn + c];
                    if (c == 0) {
                        // Left-edge FIFO of depth r.
                        at = Token{};
                        if (tc >= r && tc - r < len) {
                            const Slot& s = sched.slots[tc - r];
                            at = {true, s.rescale, s.rescale ? 0 : a(t.row0 + r, s.channel)};
                        }
                    } else {
                        at = a_reg[r * cn + c - 1];
                    }
                    if (r == 0) {
                        // Top-edge FIFO of depth c.
                        wt = Token{};
                        if (tc >= c && tc - c < len) {
                            const Slot& s = sched.slots[tc - c];
                            wt = {true, s.rescale, s.rescale ? 0 : w(s.channel, t.col0 + c)};
                        }
                    } else {
                        wt = w_reg[(r - 1) * cn + c];
                    }

                    if (!at.valid && !wt.valid)
                        continue;
                    if (at.valid != wt.valid || at.rescale != wt.rescale)
                        throw std::logic_error("msa: activation and weight wavefronts out of step");
                    any = true;
                    last_active = std::max(last_active, tc);
                    if (at.rescale) {
                        acc[r * cn + c].rescale(sched.alpha);
                        ++report.rescale_events_per_pe[r * eff_cols + c];
                        if (report.trace)
                            report.trace->push_back({cycle + tc, r, c});
                    } else {
                        acc[r * cn + c].mac(at.value, wt.value);
                        ++report.mac_pe_cycles;
                    }
                }
            }
        }
        return any ? last_active + 1 : 0;
    }

    /// Charges one pass of `len` slots over tile `t` and checks the simulated
    /// activity window against the fill model.
    void charge_pass(const Tile& t, Index len, std::uint64_t active_cycles)
    {
        const std::uint64_t fill = (t.rows - 1) + (t.cols - 1);
        if (len > 0 && active_cycles != fill + len)
            throw std::logic_error("msa: simulated pass length disagrees with the skew model");
        report.fill_cycles += fill;
        report.stream_cycles += len;
        report.drain_cycles += t.cols;
        cycle += fill + len + t.cols;
        ++report.stream_passes;
    }
};

int operand_bits(const QuantizedActivation& qa, const QuantizedWeight& qw)
{
    return std::max(qa.data.bit_width(), qw.data.bit_width());
}

void setup(Machine& m, const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
           std::span<const FloatMatrix> correction, const char* dataflow)
{
    const MSAConfig& cfg = m.cfg;
    if (cfg.pe_rows == 0 || cfg.pe_cols == 0)
        throw ConfigError("msa: array dimensions must be positive");
    if (cfg.pe_bits != 4 && cfg.pe_bits != 8)
        throw ConfigError("msa: PE width must be 4 or 8 bits");
    if (cfg.acc_bits < 2 || cfg.acc_bits > 64)
        throw ConfigError("msa: accumulator width must be in [2, 64]");
    if (cfg.vpu_lanes == 0)
        throw ConfigError("msa: vector unit needs at least one lane");
    if (plan.alpha != 2)
        throw ConfigError("msa: the array rescales by 1-bit shifts and needs alpha = 2");
    check_gemm_operands(qa, qw, plan, correction);

    const int bits = operand_bits(qa, qw);
    m.eff_rows = cfg.pe_rows;
    m.eff_cols = cfg.pe_cols;
    if (bits > cfg.pe_bits) {
        if (!(cfg.pe_bits == 4 && bits == 8 && cfg.int8_grouping))
            throw ConfigError("msa: " + std::to_string(bits) + "-bit operands do not fit " +
                              std::to_string(cfg.pe_bits) + "-bit PEs");
        m.eff_rows = cfg.pe_rows / 2;
        m.eff_cols = cfg.pe_cols / 2;
        if (m.eff_rows == 0 || m.eff_cols == 0)
            throw ConfigError("msa: array too small to group PEs for 8-bit operands");
    }
    if (plan.chunk_rows < m.eff_rows)
        throw ConfigError("msa: row chunk (" + std::to_string(plan.chunk_rows) + ") smaller than array rows (" +
                          std::to_string(m.eff_rows) + ")");

    SimReport& rep = m.report;
    rep.config = cfg;
    rep.dataflow = dataflow;
    rep.effective_rows = m.eff_rows;
    rep.effective_cols = m.eff_cols;
    rep.rescale_events_per_pe.assign(m.eff_rows * m.eff_cols, 0);
    if (cfg.trace)
        rep.trace.emplace();

    const Index k = qa.data.cols();
    const int needed = 2 * bits + (k > 1 ? std::bit_width(k - 1) : 0);
    if (cfg.acc_bits < needed)
        rep.warnings.push_back("accumulator width " + std::to_string(cfg.acc_bits) + " below " +
                               std::to_string(needed) + " bits suggested for reduction length " + std::to_string(k));
}

std::vector<Tile> make_tiles(Index m, Index n, const DecompositionPlan& plan, Index eff_rows, Index eff_cols)
{
    std::vector<Tile> tiles;
    Index r = 0;
    while (r < m) {
        const Index ci = plan.chunk_index(r);
        const Index end = ci + 1 < plan.chunks.size() ? std::min((ci + 1) * plan.chunk_rows, m) : m;
        for (Index r0 = r; r0 < end; r0 += eff_rows)
            for (Index c0 = 0; c0 < n; c0 += eff_cols)
                tiles.push_back({r0, std::min(eff_rows, end - r0), c0, std::min(eff_cols, n - c0), ci});
        r = end;
    }
    return tiles;
}

void finalize(Machine& m, std::vector<std::int64_t> accs, Index rows, Index cols, int storage_bits)
{
    SimReport& rep = m.report;
    rep.total_cycles = m.cycle;
    const double capacity = static_cast<double>(rep.total_cycles) * static_cast<double>(m.eff_rows * m.eff_cols);
    rep.utilization = capacity > 0.0 ? static_cast<double>(rep.mac_pe_cycles) / capacity : 0.0;
    rep.accumulators = IntMatrix(rows, cols, storage_bits, std::move(accs));
    if (rep.overflow_flag && m.cfg.throw_on_overflow)
        throw OverflowError("msa: accumulator exceeds " + std::to_string(m.cfg.acc_bits) + " bits");
}

} // namespace

SimReport simulate_gemm(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                        std::span<const FloatMatrix> correction, const MSAConfig& config)
{
    Machine m(config);
    setup(m, qa, qw, plan, correction, "implicit");
    const Index rows = qa.data.rows(), cols = qw.data.cols();

    std::vector<StreamSchedule> schedules;
    for (const auto& chunk : plan.chunks)
        schedules.push_back(StreamSchedule::implicit(chunk, plan.alpha));

    std::vector<std::int64_t> accs(rows * cols, 0);
    m.report.output = FloatMatrix(rows, cols);
    for (const Tile& t : make_tiles(rows, cols, plan, m.eff_rows, m.eff_cols)) {
        const StreamSchedule& sched = schedules[t.chunk];
        std::vector<Accumulator> acc(t.rows * t.cols, Accumulator(config.acc_bits));
        const auto active = m.stream(sched, qa.data, qw.data, t, acc);
        m.charge_pass(t, sched.slots.size(), active);
        m.report.bubble_cycles += sched.rescale_positions.size();
        ++m.report.tile_passes;

        for (Index r = 0; r < t.rows; ++r)
            for (Index c = 0; c < t.cols; ++c) {
                const auto& a = acc[r * t.cols + c];
                const Index row = t.row0 + r, col = t.col0 + c;
                m.report.overflow_flag = m.report.overflow_flag || a.overflowed();
                accs[row * cols + col] = a.value();
                m.report.output(row, col) =
                    dequantize_accumulator(a.value(), plan, row, qw.col_scales[col], correction, col);
            }
    }
    finalize(m, std::move(accs), rows, cols, detail::storage_width(config.acc_bits));
    return std::move(m.report);
}

SimReport simulate_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                            std::span<const FloatMatrix> correction, const MSAConfig& config)
{
    Machine m(config);
    setup(m, qa, qw, plan, correction, "explicit");
    const Index rows = qa.data.rows(), cols = qw.data.cols();
    const int groups = plan.num_groups;

    std::vector<std::int64_t> accs(rows * cols, 0);
    m.report.output = FloatMatrix(rows, cols);
    for (const Tile& t : make_tiles(rows, cols, plan, m.eff_rows, m.eff_cols)) {
        const ChunkPlan& chunk = plan.chunks[t.chunk];
        std::vector<double> y(t.rows * t.cols, 0.0);
        std::vector<Accumulator> equiv(t.rows * t.cols, Accumulator(64));
        for (int g = 1; g <= groups; ++g) {
            const StreamSchedule sched = StreamSchedule::group_only(chunk, g);
            std::vector<Accumulator> part(t.rows * t.cols, Accumulator(config.acc_bits));
            const auto active = m.stream(sched, qa.data, qw.data, t, part);
            m.charge_pass(t, sched.slots.size(), active);
            if (g > 1) {
                const std::uint64_t vpu = (t.rows * t.cols + config.vpu_lanes - 1) / config.vpu_lanes;
                m.report.dequant_cycles += vpu;
                m.cycle += vpu;
            }
            const double sg = chunk.ladder.scale(g);
            for (Index i = 0; i < part.size(); ++i) {
                const Index col = t.col0 + i % t.cols;
                m.report.overflow_flag = m.report.overflow_flag || part[i].overflowed();
                y[i] += (sg * qw.col_scales[col]) * static_cast<double>(part[i].value());
                if (g > 1)
                    equiv[i].rescale(plan.alpha);
                equiv[i].add(part[i].value());
            }
        }
        ++m.report.tile_passes;
        for (Index r = 0; r < t.rows; ++r)
            for (Index c = 0; c < t.cols; ++c) {
                const Index row = t.row0 + r, col = t.col0 + c;
                accs[row * cols + col] = equiv[r * t.cols + c].value();
                m.report.output(row, col) =
                    y[r * t.cols + c] + (correction.empty() ? 0.0 : correction[t.chunk](0, col));
            }
    }
    // Combined values may exceed the declared width even when every partial fits.
    finalize(m, std::move(accs), rows, cols, 64);
    return std::move(m.report);
}

std::string report_to_text(const SimReport& r)
{
    nlohmann::ordered_json j;
    j["dataflow"] = r.dataflow;
    j["total_cycles"] = r.total_cycles;
    j["fill_cycles"] = r.fill_cycles;
    j["stream_cycles"] = r.stream_cycles;
    j["drain_cycles"] = r.drain_cycles;
    j["bubble_cycles"] = r.bubble_cycles;
    j["dequant_cycles"] = r.dequant_cycles;
    j["tile_passes"] = r.tile_passes;
    j["stream_passes"] = r.stream_passes;
    j["mac_pe_cycles"] = r.mac_pe_cycles;
    j["utilization"] = r.utilization;
    j["overflow"] = r.overflow_flag;
    j["effective_array"] = {r.effective_rows, r.effective_cols};
    const auto [lo, hi] = std::minmax_element(r.rescale_events_per_pe.begin(), r.rescale_events_per_pe.end());
    j["rescale_events_per_pe"] = {{"min", lo == r.rescale_events_per_pe.end() ? 0 : *lo},
                                  {"max", hi == r.rescale_events_per_pe.end() ? 0 : *hi}};
    j["config"] = {{"pe_rows", r.config.pe_rows},     {"pe_cols", r.config.pe_cols},
                   {"pe_bits", r.config.pe_bits},     {"acc_bits", r.config.acc_bits},
                   {"int8_grouping", r.config.int8_grouping}, {"vpu_lanes", r.config.vpu_lanes}};
    j["model"] = "fill=(rows-1)+(cols-1), stream=slots, drain=cols per pass; passes not overlapped";
    j["warnings"] = r.warnings;
    return j.dump(2) + "\n";
}

std::string trace_to_csv(const SimReport& report)
{
    std::ostringstream out;
    out << "cycle,pe_row,pe_col,event\n";
    for (const auto& e : trace_rescale_events(report))
        out << e.cycle << ',' << e.pe_row << ',' << e.pe_col << ",rescale\n";
    return out.str();
}

} // namespace tender::msa
