#pragma once

// Checkpoints: a JSON manifest (names, shapes, dtype, byte offsets) next to
// one raw little-endian blob. Round trips are bit-exact for f64 payloads.

#include "palm/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>

namespace palm {

struct Checkpoint {
    nlohmann::json meta;  // free-form scalars/strings
    std::vector<std::pair<std::string, Tensor>> tensors;

    Tensor& at(const std::string& name) {
        for (auto& [n, t] : tensors)
            if (n == name) return t;
        throw DataError("checkpoint: missing tensor " + name);
    }
    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw DataError("checkpoint: missing tensor " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }

    void save(const std::string& prefix) const {
        namespace fs = std::filesystem;
        fs::create_directories(fs::path(prefix).parent_path());
        std::ofstream blob(prefix + ".blob", std::ios::binary);
        if (!blob) throw DataError("checkpoint: cannot open " + prefix + ".blob");
        nlohmann::json manifest;
        manifest["format"] = "palm-ckpt-v1";
        manifest["meta"] = meta;
        nlohmann::json entries = nlohmann::json::array();
        uint64_t offset = 0;
        for (const auto& [name, t] : tensors) {
            uint64_t bytes = uint64_t(t.size()) * sizeof(double);
            entries.push_back({{"name", name},
                               {"shape", t.shape},
                               {"dtype", "f64"},
                               {"offset", offset},
                               {"bytes", bytes}});
            blob.write(reinterpret_cast<const char*>(t.ptr()), std::streamsize(bytes));
            offset += bytes;
        }
        manifest["tensors"] = entries;
        std::ofstream os(prefix + ".json");
        if (!os) throw DataError("checkpoint: cannot open " + prefix + ".json");
        os << manifest.dump(1) << "\n";
    }

    static Checkpoint load(const std::string& prefix) {
        std::ifstream is(prefix + ".json");
        if (!is) throw DataError("checkpoint: cannot open " + prefix + ".json");
        nlohmann::json manifest = nlohmann::json::parse(is);
        if (manifest.value("format", "") != "palm-ckpt-v1")
            throw DataError("checkpoint: unknown format in " + prefix);
        Checkpoint ck;
        ck.meta = manifest["meta"];
        std::ifstream blob(prefix + ".blob", std::ios::binary);
        if (!blob) throw DataError("checkpoint: cannot open " + prefix + ".blob");
        for (const auto& e : manifest["tensors"]) {
            Tensor t = Tensor::zeros(e.at("shape").get<std::vector<int>>());
            if (e.at("dtype").get<std::string>() != "f64")
                throw DataError("checkpoint: unsupported dtype");
            uint64_t bytes = e.at("bytes").get<uint64_t>();
            if (bytes != uint64_t(t.size()) * sizeof(double))
                throw DataError("checkpoint: size mismatch for " + e.at("name").get<std::string>());
            blob.seekg(std::streamoff(e.at("offset").get<uint64_t>()));
            blob.read(reinterpret_cast<char*>(t.ptr()), std::streamsize(bytes));
            if (!blob) throw DataError("checkpoint: truncated blob in " + prefix);
            ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
        return ck;
    }

    // shape-validated copy into an existing tensor
    void restore_into(const std::string& name, Tensor& dst) const {
        const Tensor& src = at(name);
        if (src.shape != dst.shape)
            throw DataError(format_msg("checkpoint: ", name, " has shape ", src.shape_str(),
                                       ", model wants ", dst.shape_str()));
        *dst.data = *src.data;
    }
};

}  // namespace palm
