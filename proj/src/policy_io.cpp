#include "adpo/policy.hpp"

#include <fstream>

namespace adpo::policy {

namespace {
constexpr const char* kFormat = "adpo-policy";
constexpr int kVersion = 1;
} // namespace

nlohmann::json snapshot_to_json(const Policy& policy) {
    return {{"format", kFormat},
            {"version", kVersion},
            {"backend", to_string(policy.backend())},
            {"vocab_hash", policy.vocab().hash()},
            {"architecture", policy.architecture()},
            {"param_hash", policy.param_hash()},
            {"params", std::vector<double>(policy.params().begin(), policy.params().end())}};
}

std::unique_ptr<Policy> snapshot_from_json(const nlohmann::json& j, std::shared_ptr<const Vocabulary> vocab) {
    try {
        if (j.at("format") != kFormat || j.at("version") != kVersion) {
            throw SchemaError("unsupported policy snapshot format/version");
        }
        if (j.at("vocab_hash").get<std::string>() != vocab->hash()) {
            throw SchemaError("policy snapshot vocabulary hash does not match the loaded vocabulary");
        }
        const Backend backend = backend_from_string(j.at("backend").get<std::string>());
        const auto& arch = j.at("architecture");
        const auto max_len = arch.at("max_response_len").get<std::size_t>();
        std::unique_ptr<Policy> p;
        if (backend == Backend::tabular) {
            std::vector<TokenSeq> keys;
            for (const auto& k : arch.at("keys")) {
                keys.push_back(corpus::tokenize(*vocab, k.get<std::string>()));
            }
            p = std::make_unique<TabularPolicy>(vocab, std::move(keys), max_len);
        } else {
            NeuralShape shape{arch.at("embed_dim").get<std::size_t>(), arch.at("hidden_dim").get<std::size_t>()};
            p = std::make_unique<NeuralPolicy>(vocab, max_len, shape);
        }
        const auto params = j.at("params").get<std::vector<double>>();
        auto dst = p->mutable_params();
        if (params.size() != dst.size()) {
            throw SchemaError("policy snapshot parameter count mismatch");
        }
        std::copy(params.begin(), params.end(), dst.begin());
        if (j.contains("param_hash") && j.at("param_hash").get<std::string>() != p->param_hash()) {
            throw SchemaError("policy snapshot parameter hash mismatch");
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed policy snapshot: ") + e.what());
    }
}

void save_snapshot(const std::filesystem::path& path, const Policy& policy) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << snapshot_to_json(policy).dump() << '\n';
}

std::unique_ptr<Policy> load_snapshot(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return snapshot_from_json(j, std::move(vocab));
}

} // namespace adpo::policy
