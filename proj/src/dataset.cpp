#include <fstream>

#include "dbsa/error.hpp"
#include "dbsa/pipeline.hpp"

namespace dbsa {

namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<Demonstration> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset " + path.string());
    std::vector<Demonstration> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(where + "malformed JSON");
        }
        if (!j.is_object() || !j.contains("query") || !j.contains("answer") || !j["query"].is_string() ||
            !j["answer"].is_string())
            throw ValidationError(where + "expected an object with string fields \"query\" and \"answer\"");
        Demonstration d{j["query"].get<std::string>(), j["answer"].get<std::string>()};
        if (blank(d.query) || blank(d.answer)) throw ValidationError(where + "query and answer must be non-empty");
        out.push_back(std::move(d));
    }
    return out;
}

void save_jsonl(const std::vector<Demonstration>& demos, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    for (const auto& d : demos) out << nlohmann::json{{"query", d.query}, {"answer", d.answer}}.dump() << '\n';
}

std::vector<std::string> load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open label file " + path.string());
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) labels.push_back(std::move(t));
    }
    if (labels.empty()) throw ValidationError("label file " + path.string() + " is empty");
    return labels;
}

}  // namespace dbsa
