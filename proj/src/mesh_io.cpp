#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "avatar/geometry.hpp"

namespace avatar::geometry {

namespace {

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + what);
}

// Parses the vertex part of an OBJ face token ("7", "7/2", "7//3", "7/2/3").
long parse_index(const std::string& token, const std::filesystem::path& path, std::size_t line) {
    const auto slash = token.find('/');
    const std::string head = token.substr(0, slash);
    std::size_t used = 0;
    long value = 0;
    try {
        value = std::stol(head, &used);
    } catch (const std::exception&) {
        malformed(path, line, "bad face index '" + token + "'");
    }
    if (used != head.size()) malformed(path, line, "bad face index '" + token + "'");
    return value;
}

}  // namespace

Mesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    Mesh mesh;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        std::istringstream ls(text);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;

        if (tag == "v" || tag == "vn") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z())) malformed(path, line_no, "expected three coordinates");
            (tag == "v" ? mesh.vertices : mesh.normals).push_back(p);
        } else if (tag == "f") {
            std::vector<std::string> tokens;
            for (std::string tok; ls >> tok;) tokens.push_back(tok);
            if (tokens.size() != 3) {
                if (tokens.size() > 3) malformed(path, line_no, "triangles only");
                malformed(path, line_no, "face needs three indices");
            }
            Face f;
            for (int k = 0; k < 3; ++k) {
                const long idx = parse_index(tokens[k], path, line_no);
                if (idx < 1) malformed(path, line_no, "face index must be >= 1 (OBJ is 1-based)");
                f[k] = static_cast<std::uint32_t>(idx - 1);
            }
            mesh.faces.push_back(f);
        } else if (tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
                   tag == "mtllib") {
            continue;
        } else {
            malformed(path, line_no, "unknown record '" + tag + "'");
        }
    }
    if (in.bad()) throw IoError("read failure on " + path.string());

    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (auto idx : mesh.faces[f])
            if (idx >= mesh.vertices.size())
                throw ValidationError(path.string() + ": face " + std::to_string(f + 1) +
                                      " references missing vertex " + std::to_string(idx + 1));
    if (!mesh.normals.empty() && mesh.normals.size() != mesh.vertices.size())
        throw ValidationError(path.string() + ": normal count does not match vertex count");
    for (auto& n : mesh.normals)
        if (n.norm() > 0) n.normalize();
    return mesh;
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
    mesh.validate();
    std::FILE* out = std::fopen(path.string().c_str(), "wb");
    if (!out) throw IoError("cannot write " + path.string());
    bool ok = true;
    for (const auto& v : mesh.vertices)
        ok &= std::fprintf(out, "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z()) > 0;
    for (const auto& n : mesh.normals)
        ok &= std::fprintf(out, "vn %.6f %.6f %.6f\n", n.x(), n.y(), n.z()) > 0;
    for (const auto& f : mesh.faces)
        ok &= std::fprintf(out, "f %u %u %u\n", f[0] + 1, f[1] + 1, f[2] + 1) > 0;
    ok &= std::fclose(out) == 0;
    if (!ok) throw IoError("write failure on " + path.string());
}

}  // namespace avatar::geometry
