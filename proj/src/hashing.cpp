#include "adpo/hashing.hpp"

#include "adpo/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

namespace adpo {

namespace {

struct DigestContext {
    DigestContext() : ctx(EVP_MD_CTX_new()) {
        if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
            throw Error("sha256: digest initialisation failed");
        }
    }
    ~DigestContext() { EVP_MD_CTX_free(ctx); }
    DigestContext(const DigestContext&) = delete;
    DigestContext& operator=(const DigestContext&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx, data, n) != 1) {
            throw Error("sha256: digest update failed");
        }
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx, out.data(), &len) != 1) {
            throw Error("sha256: digest finalisation failed");
        }
        static constexpr char digits[] = "0123456789abcdef";
        std::string s;
        s.reserve(len * 2);
        for (unsigned int i = 0; i < len; ++i) {
            s.push_back(digits[out[i] >> 4]);
            s.push_back(digits[out[i] & 0xf]);
        }
        return s;
    }

    EVP_MD_CTX* ctx;
};

} // namespace

std::string sha256_hex(std::string_view bytes) {
    DigestContext d;
    d.update(bytes.data(), bytes.size());
    return d.hex();
}

std::string sha256_hex(std::span<const double> values) {
    DigestContext d;
    d.update(values.data(), values.size_bytes());
    return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    DigestContext d;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

} // namespace adpo
