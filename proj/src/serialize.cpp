#include "iclstm/serialize.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "iclstm/common.hpp"

namespace iclstm {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'L', 'S', 'T', 'M', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json activation_json(const Activation& a) {
    return {{"kind", to_string(a.kind)}, {"beta", a.beta}};
}

Activation activation_from_json(const nlohmann::json& j) {
    Activation a;
    a.kind = activation_from_string(j.at("kind").get<std::string>());
    a.beta = j.at("beta").get<double>();
    return a;
}

nlohmann::json shape_header(const ModelParams& m) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : param_blocks(m)) {
        blocks.push_back({{"name", b.name},
                          {"rows", static_cast<std::int64_t>(b.rows)},
                          {"cols", static_cast<std::int64_t>(b.cols)},
                          {"nonneg", b.nonneg}});
    }
    return {{"arch", to_string(m.arch)},
            {"n_x", m.n_x},
            {"n_o", m.n_o},
            {"hidden", m.hidden_widths()},
            {"hidden_act", activation_json(m.hidden_act)},
            {"dense_act", activation_json(m.dense_act)},
            {"output_act", activation_json(m.output_act)},
            {"blocks", blocks}};
}

}  // namespace

void save_model(const ModelParams& m, const std::string& path) {
    m.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_model: cannot open " + path);
    const std::string header = shape_header(m).dump();
    os.write(kMagic, sizeof(kMagic));
    bin::put_u32(os, kVersion);
    bin::put_u32(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& b : param_blocks(m)) bin::put_matrix(os, b.map());
    if (!os) throw IoError("save_model: write failed for " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_model: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("load_model: " + path + " is not a model file");
    }
    if (bin::get_u32(is) != kVersion) {
        throw IoError("load_model: unsupported version in " + path);
    }
    const std::uint32_t hlen = bin::get_u32(is);
    std::string htext(hlen, '\0');
    is.read(htext.data(), hlen);
    if (!is) throw IoError("load_model: truncated header in " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_model: bad header in " + path + ": " + e.what());
    }

    ModelParams m = make_model(arch_from_string(header.at("arch").get<std::string>()),
                               header.at("n_x").get<int>(),
                               header.at("hidden").get<std::vector<int>>(),
                               header.at("n_o").get<int>());
    m.hidden_act = activation_from_json(header.at("hidden_act"));
    m.dense_act = activation_from_json(header.at("dense_act"));
    m.output_act = activation_from_json(header.at("output_act"));

    auto blocks = param_blocks(m);
    const auto& jblocks = header.at("blocks");
    if (jblocks.size() != blocks.size()) {
        throw IoError("load_model: block count mismatch in " + path);
    }
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        const auto& jb = jblocks[k];
        if (jb.at("name").get<std::string>() != blocks[k].name ||
            jb.at("rows").get<std::int64_t>() != blocks[k].rows ||
            jb.at("cols").get<std::int64_t>() != blocks[k].cols) {
            throw IoError("load_model: block layout mismatch at '" + blocks[k].name + "' in " +
                          path);
        }
        blocks[k].map() = bin::get_matrix(is, blocks[k].rows, blocks[k].cols,
                                          "load_model: " + path);
    }
    m.validate();
    return m;
}

std::string model_to_json(const ModelParams& m) {
    nlohmann::json j = shape_header(m);
    nlohmann::json weights;
    for (const auto& b : param_blocks(m)) {
        const auto mat = b.map();
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
            rows.push_back(std::move(row));
        }
        weights[b.name] = std::move(rows);
    }
    j["weights"] = std::move(weights);
    return j.dump(2);
}

void export_model_json(const ModelParams& m, const std::string& path) {
    write_text_file(path, model_to_json(m));
}

}  // namespace iclstm
