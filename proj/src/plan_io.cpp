#include "tender/plan_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tender/errors.hpp"

namespace tender::plan_io {

using json = nlohmann::ordered_json;

std::string to_text(const DecompositionPlan& plan)
{
    json doc;
    doc["version"] = kVersion;
    doc["b"] = plan.bits;
    doc["alpha"] = plan.alpha;
    doc["G"] = plan.num_groups;
    doc["chunk_rows"] = plan.chunk_rows;
    doc["cols"] = plan.cols;
    json chunks = json::array();
    for (const auto& c : plan.chunks) {
        json j;
        j["row_range"] = {c.row_begin, c.row_end};
        j["bias"] = c.bias;
        j["cmax"] = c.cmax;
        j["tmax"] = c.ladder.tmax;
        j["group_of"] = c.group_of;
        j["permutation"] = c.permutation;
        j["boundaries"] = c.boundaries;
        chunks.push_back(std::move(j));
    }
    doc["chunks"] = std::move(chunks);
    return doc.dump(2) + "\n";
}

DecompositionPlan from_text(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        if (doc.at("version").get<int>() != kVersion)
            throw FormatError("plan: unsupported version");

        PlanConfig cfg;
        cfg.bits = doc.at("b").get<int>();
        cfg.alpha = doc.at("alpha").get<int>();
        cfg.num_groups = doc.at("G").get<int>();
        cfg.chunk_rows = doc.at("chunk_rows").get<Index>();
        try {
            validate(cfg);
        } catch (const ConfigError& e) {
            throw FormatError(std::string("plan: ") + e.what());
        }

        DecompositionPlan plan{doc.at("cols").get<Index>(), cfg.chunk_rows, cfg.bits, cfg.alpha, cfg.num_groups, {}};
        Index expected_begin = 0;
        for (const auto& j : doc.at("chunks")) {
            const auto range = j.at("row_range").get<std::vector<Index>>();
            if (range.size() != 2 || range[0] != expected_begin || range[1] <= range[0] ||
                range[1] - range[0] > cfg.chunk_rows)
                throw FormatError("plan: chunks do not tile the token axis");
            expected_begin = range[1];

            auto bias = j.at("bias").get<std::vector<double>>();
            auto cmax = j.at("cmax").get<std::vector<double>>();
            if (bias.size() != plan.cols || cmax.size() != plan.cols)
                throw FormatError("plan: per-channel arrays do not match cols");
            for (double v : cmax)
                if (!(v >= 0.0))
                    throw FormatError("plan: negative cmax");

            ChunkPlan chunk = make_chunk_plan(range[0], range[1], std::move(bias), std::move(cmax), cfg);
            if (chunk.ladder.tmax != j.at("tmax").get<double>() ||
                chunk.group_of != j.at("group_of").get<std::vector<int>>() ||
                chunk.permutation != j.at("permutation").get<std::vector<Index>>() ||
                chunk.boundaries != j.at("boundaries").get<std::vector<Index>>())
                throw FormatError("plan: stored grouping is inconsistent with bias/cmax");
            plan.chunks.push_back(std::move(chunk));
        }
        if (plan.chunks.empty())
            throw FormatError("plan: no chunks");
        return plan;
    } catch (const json::exception& e) {
        throw FormatError(std::string("plan: ") + e.what());
    }
}

void write_file(const std::filesystem::path& path, const DecompositionPlan& plan)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot write " + path.string());
    f << to_text(plan);
}

DecompositionPlan read_file(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

} // namespace tender::plan_io
