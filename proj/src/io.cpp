#include "protorefine/io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "protorefine/errors.hpp"

namespace protorefine {

namespace {

constexpr char kMagic[4] = {'P', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw DataError("read failure on '" + path + "'");
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) throw DataError("write failure on '" + path + "'");
}

// score with 9 significant digits; round-trips any f32 exactly
std::string format_score(float score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(score));
    return buf;
}

} // namespace

MatrixF load_embedding_file(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 20) throw DataError("'" + path + "': truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, kMagic, 4) != 0) throw DataError("'" + path + "': bad magic (expected PEMB)");
    const std::uint32_t version = get_u32le(p + 4);
    if (version != kVersion)
        throw DataError("'" + path + "': unsupported version " + std::to_string(version));
    const std::uint64_t count = get_u64le(p + 8);
    const std::uint32_t dim = get_u32le(p + 16);
    const std::uint64_t expect = count * static_cast<std::uint64_t>(dim) * 4;
    const std::uint64_t have = bytes.size() - 20;
    if (have < expect)
        throw DataError("'" + path + "': payload shorter than " + std::to_string(count) + "x" +
                        std::to_string(dim) + " (" + std::to_string(have) + " of " +
                        std::to_string(expect) + " bytes)");
    if (have > expect) throw DataError("'" + path + "': trailing bytes after payload");

    MatrixF m(static_cast<std::size_t>(count), dim);
    static_assert(sizeof(float) == 4);
    std::memcpy(m.data.data(), bytes.data() + 20, expect);
    return m;
}

void save_embedding_file(const MatrixF& m, const std::string& path) {
    std::string out;
    out.reserve(20 + m.data.size() * 4);
    out.append(kMagic, 4);
    put_u32le(out, kVersion);
    put_u64le(out, m.rows);
    put_u32le(out, static_cast<std::uint32_t>(m.cols));
    const std::size_t payload = m.data.size() * 4;
    const std::size_t head = out.size();
    out.resize(head + payload);
    std::memcpy(out.data() + head, m.data.data(), payload);
    write_file(path, out);
}

SlideDataset load_slide(const std::string& manifest_path, const std::string& embedding_path) {
    SlideDataset slide;
    {
        std::ifstream in(manifest_path);
        if (!in) throw DataError("cannot open '" + manifest_path + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw DataError("manifest line " + std::to_string(lineno) + ": malformed JSON (" +
                                e.what() + ")");
            }
            PatchRecord rec;
            try {
                rec.patch_id = j.at("patch_id").get<std::string>();
                rec.grid_x = j.at("grid_x").get<std::int64_t>();
                rec.grid_y = j.at("grid_y").get<std::int64_t>();
                rec.coarse_label = j.at("coarse_label").get<int>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
            }
            slide.patches.push_back(std::move(rec));
        }
    }
    slide.embeddings = load_embedding_file(embedding_path);
    if (slide.embeddings.rows != slide.patches.size())
        throw DataError("count mismatch: embedding header N=" + std::to_string(slide.embeddings.rows) +
                        ", manifest lines=" + std::to_string(slide.patches.size()));

    // slide_id from the manifest filename, stripped of directory and extension
    std::string name = manifest_path;
    if (auto pos = name.find_last_of("/\\"); pos != std::string::npos) name = name.substr(pos + 1);
    if (auto pos = name.rfind('.'); pos != std::string::npos && pos > 0) name = name.substr(0, pos);
    slide.slide_id = name;

    validate(slide);
    return slide;
}

void save_slide(const SlideDataset& slide, const std::string& manifest_path,
                const std::string& embedding_path) {
    validate(slide);
    std::string out;
    for (const PatchRecord& p : slide.patches) {
        nlohmann::ordered_json j;
        j["patch_id"] = p.patch_id;
        j["grid_x"] = p.grid_x;
        j["grid_y"] = p.grid_y;
        j["coarse_label"] = p.coarse_label;
        out += j.dump();
        out += '\n';
    }
    write_file(manifest_path, out);
    save_embedding_file(slide.embeddings, embedding_path);
}

PrototypeSet load_prototypes(const std::string& path) {
    PrototypeSet set;
    set.vectors = load_embedding_file(path);

    const std::string sidecar_path = path + ".json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(sidecar_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + sidecar_path + "': malformed JSON (" + e.what() + ")");
    }
    try {
        const std::string level = j.at("level").get<std::string>();
        if (level == "local")
            set.level = PrototypeLevel::local;
        else if (level == "global")
            set.level = PrototypeLevel::global;
        else
            throw DataError("'" + sidecar_path + "': unknown level '" + level + "'");
        if (j.at("source_slide").is_null())
            set.source_slide.reset();
        else
            set.source_slide = j.at("source_slide").get<std::string>();
        set.member_counts = j.at("member_counts").get<std::vector<std::int64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + sidecar_path + "': " + e.what());
    }
    validate(set);
    return set;
}

void save_prototypes(const PrototypeSet& set, const std::string& path) {
    validate(set);
    save_embedding_file(set.vectors, path);
    nlohmann::ordered_json j;
    j["level"] = set.level == PrototypeLevel::local ? "local" : "global";
    if (set.source_slide.has_value())
        j["source_slide"] = *set.source_slide;
    else
        j["source_slide"] = nullptr;
    j["member_counts"] = set.member_counts;
    write_file(path + ".json", j.dump() + "\n");
}

LabelTable load_label_table(const std::string& path, const std::string& slide_id) {
    const std::string bytes = read_file(path);
    LabelTable table;
    table.slide_id = slide_id;
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != "patch_id,label,score")
                throw DataError("'" + path + "': bad CSV header '" + line + "'");
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": expected 3 fields");
        LabelEntry e;
        e.patch_id = line.substr(0, c1);
        const std::string label_str = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string score_str = line.substr(c2 + 1);
        if (label_str == "0")
            e.label = 0;
        else if (label_str == "1")
            e.label = 1;
        else
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": label not in {0,1}");
        char* end = nullptr;
        e.score = std::strtof(score_str.c_str(), &end);
        if (end == score_str.c_str() || *end != '\0')
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": bad score '" +
                            score_str + "'");
        table.entries.push_back(std::move(e));
    }
    validate(table);
    return table;
}

void save_label_table(const LabelTable& table, const std::string& path) {
    validate(table);
    std::string out = "patch_id,label,score\n";
    for (const LabelEntry& e : table.entries) {
        out += e.patch_id;
        out += ',';
        out += e.label ? '1' : '0';
        out += ',';
        out += format_score(e.score);
        out += '\n';
    }
    write_file(path, out);
}

void render_label_mask(const std::vector<PatchRecord>& patches, const LabelTable& labels,
                       const std::string& path) {
    if (patches.empty()) throw DataError("cannot render an empty patch grid");
    std::unordered_map<std::string, int> label_by_id;
    for (const LabelEntry& e : labels.entries) label_by_id[e.patch_id] = e.label;

    std::int64_t w = 0, h = 0;
    for (const PatchRecord& p : patches) {
        w = std::max(w, p.grid_x + 1);
        h = std::max(h, p.grid_y + 1);
    }
    std::vector<unsigned char> pix(static_cast<std::size_t>(w * h), 128);
    for (const PatchRecord& p : patches) {
        auto it = label_by_id.find(p.patch_id);
        if (it == label_by_id.end())
            throw DataError("no label for patch '" + p.patch_id + "'");
        pix[static_cast<std::size_t>(p.grid_y * w + p.grid_x)] = it->second ? 255 : 0;
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pix.data()), pix.size());
    write_file(path, out);
}

} // namespace protorefine
