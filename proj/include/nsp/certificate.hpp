#pragma once

// Proof certificate serialization (.nspc, JSON with string rationals) and
// the digest binding a certificate to exact network + query bytes.
// The independent checker lives in checker.hpp; this header is the file
// format they share.

#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nsp/verifier.hpp"

namespace nsp {

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

// The digest covers the canonical network serialization plus the exact
// query text bytes. Reformatting the network JSON leaves it unchanged;
// touching any weight or any query byte does not.
inline std::string certificate_digest(const Network& net, const std::string& query_text) {
    return sha256_hex(canonical_network_text(net) + "\n" + query_text);
}

inline std::string certificate_digest(const Network& net, const VerifyQuery& query) {
    return certificate_digest(net, export_query(query));
}

struct CertNode {
    // internal nodes split (layer, neuron); leaves carry the witness
    int layer = -1, neuron = -1;
    std::unique_ptr<CertNode> active, inactive;
    std::vector<Rat> multipliers;
    Rat contradiction;
    bool leaf() const { return layer < 0; }
};

struct ProofCertificate {
    int format_version = 1;
    std::string digest;
    std::unique_ptr<CertNode> tree;
};

// Parse failures carry the rejection reason the checker reports for them:
// structural damage is "malformed-tree", a split node without both phases
// is "incomplete-phase-coverage".
struct CertParseError : std::runtime_error {
    std::string reason;
    CertParseError(std::string reason_, const std::string& detail)
        : std::runtime_error(detail), reason(std::move(reason_)) {}
};

namespace detail {

inline std::unique_ptr<CertNode> cert_node_from_bnb(const BnbNode& n) {
    auto out = std::make_unique<CertNode>();
    if (n.leaf()) {
        out->multipliers = n.witness.mult;
        out->contradiction = n.witness.contradiction;
        return out;
    }
    out->layer = n.layer;
    out->neuron = n.neuron;
    out->active = cert_node_from_bnb(*n.active);
    out->inactive = cert_node_from_bnb(*n.inactive);
    return out;
}

inline nlohmann::json cert_node_to_json(const CertNode& n) {
    nlohmann::json j;
    if (n.leaf()) {
        nlohmann::json mults = nlohmann::json::array();
        for (const auto& m : n.multipliers) mults.push_back(to_string(m));
        j["leaf"] = {{"multipliers", mults}, {"contradiction", to_string(n.contradiction)}};
        return j;
    }
    j["split"] = {{"layer", n.layer}, {"neuron", n.neuron}};
    j["children"] = nlohmann::json::array();
    j["children"].push_back({{"phase", "active"}, {"tree", cert_node_to_json(*n.active)}});
    j["children"].push_back({{"phase", "inactive"}, {"tree", cert_node_to_json(*n.inactive)}});
    return j;
}

inline Rat cert_rat(const nlohmann::json& j, const char* what) {
    if (!j.is_string())
        throw CertParseError("malformed-tree", std::string(what) + " must be a string rational");
    auto r = try_parse_rational(j.get<std::string>());
    if (!r)
        throw CertParseError("malformed-tree",
                             std::string("bad rational in ") + what + ": " + j.get<std::string>());
    return *r;
}

inline std::unique_ptr<CertNode> cert_node_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw CertParseError("malformed-tree", "tree node is not an object");
    auto node = std::make_unique<CertNode>();
    if (j.contains("leaf")) {
        const auto& leaf = j["leaf"];
        if (!leaf.is_object() || !leaf.contains("multipliers") || !leaf.contains("contradiction"))
            throw CertParseError("malformed-tree", "leaf lacks multipliers or contradiction");
        if (!leaf["multipliers"].is_array())
            throw CertParseError("malformed-tree", "multipliers must be an array");
        for (const auto& m : leaf["multipliers"])
            node->multipliers.push_back(cert_rat(m, "multiplier"));
        node->contradiction = cert_rat(leaf["contradiction"], "contradiction");
        return node;
    }
    if (!j.contains("split"))
        throw CertParseError("malformed-tree", "node is neither a leaf nor a split");
    const auto& sp = j["split"];
    if (!sp.is_object() || !sp.contains("layer") || !sp.contains("neuron") ||
        !sp["layer"].is_number_integer() || !sp["neuron"].is_number_integer())
        throw CertParseError("malformed-tree", "split lacks integer layer/neuron");
    node->layer = sp["layer"].get<int>();
    node->neuron = sp["neuron"].get<int>();
    if (node->layer < 0 || node->neuron < 0)
        throw CertParseError("malformed-tree", "split indices must be nonnegative");
    if (!j.contains("children") || !j["children"].is_array())
        throw CertParseError("malformed-tree", "split lacks a children array");
    for (const auto& child : j["children"]) {
        if (!child.is_object() || !child.contains("phase") || !child.contains("tree") ||
            !child["phase"].is_string())
            throw CertParseError("malformed-tree", "child lacks phase or tree");
        std::string phase = child["phase"].get<std::string>();
        std::unique_ptr<CertNode>* slot = nullptr;
        if (phase == "active") slot = &node->active;
        else if (phase == "inactive") slot = &node->inactive;
        else throw CertParseError("malformed-tree", "unknown phase '" + phase + "'");
        if (*slot)
            throw CertParseError("incomplete-phase-coverage",
                                 "phase '" + phase + "' appears twice under one split");
        *slot = cert_node_from_json(child["tree"]);
    }
    if (!node->active || !node->inactive)
        throw CertParseError("incomplete-phase-coverage",
                             "split on layer " + std::to_string(node->layer) + " neuron " +
                                 std::to_string(node->neuron) + " lacks both phases");
    return node;
}

}  // namespace detail

inline ProofCertificate make_certificate(const Network& net, const VerifyQuery& query,
                                         const BnbNode& tree) {
    ProofCertificate cert;
    cert.digest = certificate_digest(net, query);
    cert.tree = detail::cert_node_from_bnb(tree);
    return cert;
}

inline nlohmann::json certificate_to_json(const ProofCertificate& cert) {
    return nlohmann::json{{"format_version", cert.format_version},
                          {"digest", cert.digest},
                          {"tree", detail::cert_node_to_json(*cert.tree)}};
}

inline ProofCertificate certificate_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("format_version") || !j.contains("digest") ||
        !j.contains("tree"))
        throw CertParseError("malformed-tree", "certificate lacks format_version/digest/tree");
    if (!j["format_version"].is_number_integer() || j["format_version"].get<int>() != 1)
        throw CertParseError("malformed-tree", "unsupported format_version");
    if (!j["digest"].is_string())
        throw CertParseError("malformed-tree", "digest must be a string");
    ProofCertificate cert;
    cert.digest = j["digest"].get<std::string>();
    cert.tree = detail::cert_node_from_json(j["tree"]);
    return cert;
}

inline void save_certificate(const ProofCertificate& cert, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << certificate_to_json(cert).dump(2) << "\n";
}

inline ProofCertificate load_certificate(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CertParseError("malformed-tree", std::string("not valid JSON: ") + e.what());
    }
    return certificate_from_json(j);
}

inline bool cert_node_equal(const CertNode& a, const CertNode& b) {
    if (a.leaf() != b.leaf()) return false;
    if (a.leaf())
        return a.multipliers == b.multipliers && a.contradiction == b.contradiction;
    return a.layer == b.layer && a.neuron == b.neuron &&
           cert_node_equal(*a.active, *b.active) && cert_node_equal(*a.inactive, *b.inactive);
}

}  // namespace nsp
