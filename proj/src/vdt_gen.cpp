#include "vdt/vdt_gen.hpp"

#include "vdt/error.hpp"
#include "vdt/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <ctime>
#include <mutex>
#include <thread>

namespace vdt {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) {
        ++b;
    }
    while (e > b && is_space(s[e - 1])) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Python repr of a str: single quotes unless the text contains one.
std::string python_repr(std::string_view s) {
    const bool has_single = s.find('\'') != std::string_view::npos;
    const bool has_double = s.find('"') != std::string_view::npos;
    const char q = (has_single && !has_double) ? '"' : '\'';
    std::string out(1, q);
    for (char c : s) {
        if (c == '\\' || c == q) {
            out += '\\';
        }
        out += c;
    }
    out += q;
    return out;
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

// Span of the first balanced {...} block. Quotes are only tracked once
// inside the block, so apostrophes in leading prose are harmless.
std::string_view brace_block(std::string_view text) {
    const auto open = text.find('{');
    if (open == std::string_view::npos) {
        throw Error(ErrorCode::NoBraceBlock, "response contains no '{'");
    }
    int depth = 0;
    char quote = 0;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (quote != 0) {
            if (c == '\\') {
                ++i;
            } else if (c == quote) {
                quote = 0;
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) {
                return text.substr(open, i - open + 1);
            }
        }
    }
    throw Error(ErrorCode::UnbalancedBraces, "no closing '}' for the block opened at offset " + std::to_string(open));
}

class LiteralParser {
  public:
    explicit LiteralParser(std::string_view s) : s_(s) {}

    VdtMapping parse_dict() {
        VdtMapping out;
        expect('{');
        skip_ws();
        if (peek() == '}') {
            ++i_;
            return out;
        }
        for (;;) {
            skip_ws();
            if (!at_quote()) {
                throw Error(ErrorCode::NonStringValue, "dictionary key is not a string " + where());
            }
            std::string key = trim(parse_string());
            skip_ws();
            expect(':');
            skip_ws();
            out.emplace_back(std::move(key), parse_list());
            skip_ws();
            if (peek() == ',') {
                ++i_;
                skip_ws();
                if (peek() == '}') {
                    ++i_;
                    return out;
                }
                continue;
            }
            expect('}');
            return out;
        }
    }

  private:
    std::vector<std::string> parse_list() {
        if (at_quote() || peek() == '{' || std::isdigit(static_cast<unsigned char>(peek())) != 0) {
            throw Error(ErrorCode::NonStringValue, "dictionary value is not a list of strings " + where());
        }
        if (peek() != '[') {
            // True/None/other bare tokens
            throw Error(ErrorCode::NonStringValue, "unexpected value " + where());
        }
        ++i_;
        std::vector<std::string> out;
        skip_ws();
        if (peek() == ']') {
            ++i_;
            return out;
        }
        for (;;) {
            skip_ws();
            if (!at_quote()) {
                throw Error(ErrorCode::NonStringValue, "list element is not a string " + where());
            }
            out.push_back(trim(parse_string()));
            skip_ws();
            if (peek() == ',') {
                ++i_;
                skip_ws();
                if (peek() == ']') {
                    ++i_;
                    return out;
                }
                continue;
            }
            expect(']');
            return out;
        }
    }

    // One string, or several adjacent literals concatenated as Python does.
    std::string parse_string() {
        std::string out = parse_one_string();
        for (;;) {
            const auto save = i_;
            skip_ws();
            if (!at_quote()) {
                i_ = save;
                return out;
            }
            out += parse_one_string();
        }
    }

    std::string parse_one_string() {
        const char q = s_[i_++];
        std::string out;
        while (i_ < s_.size()) {
            const char c = s_[i_++];
            if (c == q) {
                return out;
            }
            if (c != '\\') {
                out += c;
                continue;
            }
            if (i_ >= s_.size()) {
                break;
            }
            const char e = s_[i_++];
            switch (e) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case 'r': out += '\r'; break;
            case '\\': out += '\\'; break;
            case '\'': out += '\''; break;
            case '"': out += '"'; break;
            case '\n': break; // line continuation
            case 'x': out += static_cast<char>(read_hex(2)); break;
            case 'u': append_utf8(out, read_hex(4)); break;
            case 'U': append_utf8(out, read_hex(8)); break;
            default:
                out += '\\';
                out += e;
            }
        }
        throw Error(ErrorCode::MalformedResponse, "unterminated string literal");
    }

    std::uint32_t read_hex(int digits) {
        std::uint32_t v = 0;
        for (int k = 0; k < digits; ++k) {
            const int h = i_ < s_.size() ? hex_value(s_[i_]) : -1;
            if (h < 0) {
                throw Error(ErrorCode::MalformedResponse, "bad hex escape " + where());
            }
            v = v * 16 + static_cast<std::uint32_t>(h);
            ++i_;
        }
        return v;
    }

    void skip_ws() {
        while (i_ < s_.size() && is_space(s_[i_])) {
            ++i_;
        }
    }
    [[nodiscard]] char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
    [[nodiscard]] bool at_quote() const { return peek() == '\'' || peek() == '"'; }
    void expect(char c) {
        if (peek() != c) {
            throw Error(ErrorCode::MalformedResponse, std::string("expected '") + c + "' " + where());
        }
        ++i_;
    }
    [[nodiscard]] std::string where() const { return "at offset " + std::to_string(i_); }

    std::string_view s_;
    std::size_t i_ = 0;
};

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

bool is_malformed(ErrorCode c) {
    return c == ErrorCode::MalformedResponse || c == ErrorCode::NoBraceBlock || c == ErrorCode::UnbalancedBraces ||
           c == ErrorCode::NonStringValue || c == ErrorCode::EmptyResponse;
}

std::string file_slug(std::string_view name) {
    std::string out;
    for (char c : name) {
        out += std::isalnum(static_cast<unsigned char>(c)) != 0 ? c : '_';
    }
    return out + "-" + sha256_hex(name).substr(0, 8);
}

} // namespace

// ---- prompts ----

std::string render_attribute_prompt(const PromptStyle& style, const std::vector<std::string>& class_names) {
    if (class_names.empty()) {
        throw Error(ErrorCode::EmptyInput, "attribute prompt needs at least one class name");
    }
    std::string list = "[";
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (i > 0) {
            list += ", ";
        }
        list += python_repr(class_names[i]);
    }
    list += "]";
    return "I am creating class attributes for a zero-shot image recognition algorithm to classify different images of " +
           style.dataset_description + ". The attributes are part of side information about the classes. List " +
           std::to_string(style.attribute_count) +
           " attributes that can form part of a description of the class that will aid in distinguishing between the "
           "following list of classes visually:\n" +
           list;
}

std::string render_class_prompt(const PromptStyle& style, const std::string& class_name,
                                const std::vector<std::string>& attribute_lines) {
    if (attribute_lines.empty()) {
        throw Error(ErrorCode::EmptyInput, "class prompt needs at least one attribute");
    }
    std::string out = "Describe the following " + style.subject_noun +
                      " by adding one sentence about each attribute for the following " + style.subject_noun + ": " +
                      class_name + ". Return the answer as a python dictionary with the " + style.key_description +
                      " and the value is a list of sentences. Rewrite the attribute as a full sentence. Do not include "
                      "the attributes as keys. Attributes: \n";
    for (std::size_t i = 0; i < attribute_lines.size(); ++i) {
        if (i > 0) {
            out += '\n';
        }
        out += attribute_lines[i];
    }
    return out;
}

std::vector<std::string> parse_attribute_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string line = trim(text.substr(start, end - start));
        start = end + 1;

        // bullets and "12." / "12)" numbering
        std::size_t k = 0;
        while (k < line.size() && (line[k] == '-' || line[k] == '*' || line[k] == '+')) {
            ++k;
        }
        if (line.compare(k, 3, "\xE2\x80\xA2") == 0) {
            k += 3;
        }
        std::size_t d = k;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d])) != 0) {
            ++d;
        }
        if (d > k && d < line.size() && (line[d] == '.' || line[d] == ')')) {
            k = d + 1;
        }
        line = trim(std::string_view(line).substr(k));
        line = replace_all(line, "**", "");

        const auto colon = line.find(':');
        if (colon == std::string::npos || colon == 0 || trim(std::string_view(line).substr(colon + 1)).empty()) {
            continue; // prose such as "Here are the attributes:"
        }
        out.push_back(line);
    }
    return out;
}

std::string attribute_name(std::string_view attribute_line) {
    return trim(attribute_line.substr(0, attribute_line.find(':')));
}

// ---- response parsing ----

VdtMapping parse_vdt_response(std::string_view text) {
    LiteralParser parser(brace_block(text));
    return parser.parse_dict();
}

std::string to_python_dict_literal(const VdtMapping& mapping) {
    auto quote = [](std::string_view s) {
        std::string out = "\"";
        for (char c : s) {
            const auto u = static_cast<unsigned char>(c);
            switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (u < 0x20 || u == 0x7F) {
                    static constexpr char kHex[] = "0123456789abcdef";
                    out += "\\x";
                    out += kHex[u >> 4];
                    out += kHex[u & 0xF];
                } else {
                    out += c;
                }
            }
        }
        return out + "\"";
    };
    std::string out = "{";
    for (std::size_t i = 0; i < mapping.size(); ++i) {
        if (i > 0) {
            out += ",\n ";
        }
        out += quote(mapping[i].first) + ": [";
        const auto& sentences = mapping[i].second;
        for (std::size_t j = 0; j < sentences.size(); ++j) {
            if (j > 0) {
                out += ", ";
            }
            out += quote(sentences[j]);
        }
        out += "]";
    }
    return out + "}";
}

// ---- corpus ----

void VdtCorpus::validate() const {
    for (const auto& [name, sentences] : classes) {
        if (sentences.empty()) {
            throw Error(ErrorCode::EmptyClass, "class '" + name + "' has no sentences");
        }
        for (const auto& s : sentences) {
            if (s.empty() || s != trim(s)) {
                throw Error(ErrorCode::InvalidArgument, "class '" + name + "' has an empty or untrimmed sentence");
            }
        }
    }
}

void VdtCorpus::validate(const std::vector<std::string>& class_names) const {
    validate();
    for (const auto& name : class_names) {
        if (find(name) == nullptr) {
            throw Error(ErrorCode::ClassCoverage, "corpus has no sentences for class '" + name + "'");
        }
    }
}

const std::vector<std::string>* VdtCorpus::find(std::string_view class_name) const {
    for (const auto& [name, sentences] : classes) {
        if (name == class_name) {
            return &sentences;
        }
    }
    return nullptr;
}

std::string VdtCorpus::to_json() const {
    ordered_json j;
    j["dataset_id"] = dataset_id;
    j["attribute_list"] = attribute_list;
    j["classes"] = ordered_json::object();
    for (const auto& [name, sentences] : classes) {
        j["classes"][name] = sentences;
    }
    ordered_json prov;
    prov["model"] = provenance.model;
    prov["created_at"] = provenance.created_at;
    prov["attribute_digest"] = provenance.attribute_digest;
    prov["responses"] = ordered_json::object();
    for (const auto& [name, r] : provenance.responses) {
        prov["responses"][name] = {{"digest", r.digest}, {"fetched_at", r.fetched_at}, {"attempts", r.attempts}};
    }
    j["provenance"] = prov;
    return j.dump(2) + "\n";
}

VdtCorpus VdtCorpus::parse(std::string_view json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("corpus JSON: ") + e.what());
    }
    VdtCorpus c;
    try {
        c.dataset_id = j.value("dataset_id", "");
        if (j.contains("attribute_list")) {
            c.attribute_list = j.at("attribute_list").get<std::vector<std::string>>();
        }
        for (const auto& [name, sentences] : j.at("classes").items()) {
            c.classes.emplace_back(name, sentences.get<std::vector<std::string>>());
        }
        if (j.contains("provenance")) {
            const auto& p = j.at("provenance");
            c.provenance.model = p.value("model", "");
            c.provenance.created_at = p.value("created_at", "");
            c.provenance.attribute_digest = p.value("attribute_digest", "");
            if (p.contains("responses")) {
                for (const auto& [name, r] : p.at("responses").items()) {
                    c.provenance.responses[name] = ClassProvenance{r.value("digest", ""), r.value("fetched_at", ""),
                                                                   r.value("attempts", std::size_t{0})};
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("corpus JSON: ") + e.what());
    }
    return c;
}

VdtCorpus VdtCorpus::load(const fs::path& path) { return parse(read_file(path)); }

void VdtCorpus::save(const fs::path& path) const { write_file_atomic(path, to_json()); }

// ---- requests ----

AttributeResult request_attributes(ChatClient& client, const PromptStyle& style,
                                   const std::vector<std::string>& class_names) {
    const auto prompt = render_attribute_prompt(style, class_names);
    AttributeResult r;
    r.response = client.complete(style.system_prompt, prompt);
    r.raw = r.response.content;
    r.attributes = parse_attribute_lines(r.raw);
    if (r.attributes.empty()) {
        throw Error(ErrorCode::EmptyResponse, "no attribute lines in the response");
    }
    return r;
}

std::vector<std::string> select_class_sentences(const VdtMapping& mapping, const std::string& class_name,
                                                std::size_t expected_count) {
    const auto want = lower(trim(class_name));
    const std::vector<std::string>* found = nullptr;
    for (const auto& [key, sentences] : mapping) {
        if (lower(key) == want) {
            found = &sentences;
            break;
        }
    }
    if (found == nullptr) {
        // "A340-200" for "Airbus A340-200"
        for (const auto& [key, sentences] : mapping) {
            const auto k = lower(key);
            if (!k.empty() && want.size() > k.size() && want.ends_with(k) && want[want.size() - k.size() - 1] == ' ') {
                found = &sentences;
                break;
            }
        }
    }
    if (found == nullptr) {
        throw Error(ErrorCode::MalformedResponse, "response has no key for class '" + class_name + "'");
    }
    std::vector<std::string> out;
    for (const auto& s : *found) {
        if (!s.empty()) {
            out.push_back(s);
        }
    }
    if (out.empty()) {
        throw Error(ErrorCode::MalformedResponse, "no sentences for class '" + class_name + "'");
    }
    if (expected_count > 0 && out.size() != expected_count) {
        throw Error(ErrorCode::MalformedResponse, "class '" + class_name + "': expected " +
                                                      std::to_string(expected_count) + " sentences, got " +
                                                      std::to_string(out.size()));
    }
    return out;
}

ClassVdtResult request_class_vdt(ChatClient& client, const PromptStyle& style, const std::string& class_name,
                                 const std::vector<std::string>& attribute_lines, std::size_t max_malformed_retries) {
    const auto prompt = render_class_prompt(style, class_name, attribute_lines);
    ClassVdtResult r;
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= max_malformed_retries; ++attempt) {
        const auto resp = client.complete(style.system_prompt, prompt);
        ++r.requests;
        r.attempts += resp.attempts;
        try {
            if (trim(resp.content).empty()) {
                throw Error(ErrorCode::EmptyResponse, "empty reply");
            }
            r.sentences = select_class_sentences(parse_vdt_response(resp.content), class_name, attribute_lines.size());
            r.raw = resp.content;
            return r;
        } catch (const Error& e) {
            if (!is_malformed(e.code())) {
                throw;
            }
            last_error = e.what();
            r.rejected.push_back(resp.content);
        }
    }
    throw Error(ErrorCode::MalformedResponse, "class '" + class_name + "' still malformed after " +
                                                  std::to_string(r.requests) + " requests: " + last_error);
}

// ---- generation ----

namespace {

struct CacheEntry {
    std::string raw;
    std::string fetched_at;
    std::size_t attempts = 0;
};

class ResponseCache {
  public:
    explicit ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

    static std::string key(const std::string& model, const std::string& system, const std::string& user) {
        return sha256_hex(model + '\n' + system + '\n' + user);
    }

    [[nodiscard]] std::optional<CacheEntry> get(const std::string& k) const {
        const auto p = dir_ / (k + ".json");
        if (!fs::exists(p)) {
            return std::nullopt;
        }
        try {
            const auto j = ordered_json::parse(read_file(p));
            return CacheEntry{j.at("raw").get<std::string>(), j.value("fetched_at", ""),
                              j.value("attempts", std::size_t{0})};
        } catch (const nlohmann::json::exception&) {
            return std::nullopt; // unreadable entry is refetched
        }
    }

    void put(const std::string& k, const std::string& label, const std::string& prompt, const CacheEntry& e) const {
        ordered_json j;
        j["label"] = label;
        j["prompt"] = prompt;
        j["raw"] = e.raw;
        j["digest"] = sha256_hex(e.raw);
        j["fetched_at"] = e.fetched_at;
        j["attempts"] = e.attempts;
        write_file_atomic(dir_ / (k + ".json"), j.dump(2) + "\n");
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }

  private:
    fs::path dir_;
};

} // namespace

GenerationResult generate_corpus(ChatClient& client, const PromptStyle& style,
                                 const std::vector<std::string>& class_names, const GenerationOptions& opts) {
    if (class_names.empty()) {
        throw Error(ErrorCode::EmptyInput, "no classes to generate");
    }
    auto log = [&](const std::string& msg) {
        if (opts.log) {
            opts.log(msg);
        }
    };
    fs::create_directories(opts.cache_dir);
    const ResponseCache cache(opts.cache_dir);
    const auto model = client.model_id();

    GenerationResult result;
    result.corpus.dataset_id = opts.dataset_id;
    result.corpus.provenance.model = model;

    // attributes
    const auto attr_prompt = render_attribute_prompt(style, class_names);
    const auto attr_key = ResponseCache::key(model, style.system_prompt, attr_prompt);
    CacheEntry attr_entry;
    if (auto hit = cache.get(attr_key)) {
        attr_entry = *hit;
        ++result.cache_hits;
    } else {
        auto r = request_attributes(client, style, class_names);
        ++result.requests;
        attr_entry = CacheEntry{r.raw, utc_now(), r.response.attempts};
        cache.put(attr_key, "attributes", attr_prompt, attr_entry);
    }
    result.corpus.attribute_list = parse_attribute_lines(attr_entry.raw);
    if (result.corpus.attribute_list.empty()) {
        throw Error(ErrorCode::EmptyResponse, "cached attribute response has no attribute lines");
    }
    result.corpus.provenance.attribute_digest = sha256_hex(attr_entry.raw);
    result.corpus.provenance.created_at = attr_entry.fetched_at;
    log("attributes: " + std::to_string(result.corpus.attribute_list.size()));

    // per-class sentences
    const auto& attrs = result.corpus.attribute_list;
    struct Slot {
        std::optional<std::vector<std::string>> sentences;
        ClassProvenance prov;
        bool from_cache = false;
        bool requested = false;
    };
    std::vector<Slot> slots(class_names.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;

    const auto quarantine_dir = opts.cache_dir / "quarantine";

    auto work = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= class_names.size()) {
                return;
            }
            {
                const std::lock_guard lock(mu);
                if (failure) {
                    return;
                }
            }
            const auto& name = class_names[i];
            auto& slot = slots[i];
            try {
                const auto prompt = render_class_prompt(style, name, attrs);
                const auto key = ResponseCache::key(model, style.system_prompt, prompt);
                auto hit = cache.get(key);
                const auto repaired = quarantine_dir / (file_slug(name) + ".repaired.txt");
                if (!hit && fs::exists(repaired)) {
                    CacheEntry e{read_file(repaired), utc_now(), 0};
                    // fails loudly if the repair is still malformed
                    select_class_sentences(parse_vdt_response(e.raw), name, attrs.size());
                    cache.put(key, name, prompt, e);
                    hit = e;
                }
                if (hit) {
                    slot.sentences = select_class_sentences(parse_vdt_response(hit->raw), name, attrs.size());
                    slot.prov = ClassProvenance{sha256_hex(hit->raw), hit->fetched_at, hit->attempts};
                    slot.from_cache = true;
                    continue;
                }
                slot.requested = true;
                try {
                    auto r = request_class_vdt(client, style, name, attrs, opts.max_malformed_retries);
                    const CacheEntry e{r.raw, utc_now(), r.attempts};
                    cache.put(key, name, prompt, e);
                    slot.sentences = std::move(r.sentences);
                    slot.prov = ClassProvenance{sha256_hex(e.raw), e.fetched_at, e.attempts};
                    log("fetched: " + name);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::MalformedResponse) {
                        throw;
                    }
                    ordered_json q;
                    q["class"] = name;
                    q["cache_key"] = key;
                    q["prompt"] = prompt;
                    q["error"] = e.what();
                    q["repair"] = "save a corrected reply as " + repaired.filename().string() + " and rerun";
                    fs::create_directories(quarantine_dir);
                    write_file_atomic(quarantine_dir / (file_slug(name) + ".json"), q.dump(2) + "\n");
                    log("quarantined: " + name);
                }
            } catch (...) {
                const std::lock_guard lock(mu);
                if (!failure) {
                    failure = std::current_exception();
                }
                return;
            }
        }
    };

    const auto workers = std::max<std::size_t>(1, std::min(opts.max_in_flight, class_names.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) {
        pool.emplace_back(work);
    }
    work();
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    for (std::size_t i = 0; i < class_names.size(); ++i) {
        auto& slot = slots[i];
        if (!slot.sentences) {
            result.quarantined.push_back(class_names[i]);
            continue;
        }
        result.cache_hits += slot.from_cache ? 1 : 0;
        result.requests += slot.requested ? 1 : 0;
        result.corpus.classes.emplace_back(class_names[i], std::move(*slot.sentences));
        result.corpus.provenance.responses[class_names[i]] = slot.prov;
    }
    result.corpus.validate();
    return result;
}

// ---- prompt manifest ----

PromptManifest assemble_prompts(std::string_view prompt_template, const VdtCorpus& corpus) {
    if (prompt_template.find("{classname}") == std::string_view::npos ||
        prompt_template.find("{sentence}") == std::string_view::npos) {
        throw Error(ErrorCode::BadTemplate, "template needs both {classname} and {sentence} slots: \"" +
                                                std::string(prompt_template) + "\"");
    }
    PromptManifest m;
    m.dataset_id = corpus.dataset_id;
    m.prompt_template = prompt_template;
    for (const auto& [name, sentences] : corpus.classes) {
        ClassPrompts cp;
        cp.class_name = name;
        const bool aligned = sentences.size() == corpus.attribute_list.size();
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            const auto s = trim(sentences[i]);
            if (s.empty()) {
                m.warnings.push_back("class '" + name + "': sentence " + std::to_string(i) + " is empty, skipped");
                continue;
            }
            // {classname} first so a class name containing "{sentence}" is not expanded
            std::string p(prompt_template);
            p = replace_all(p, "{sentence}", "\x01");
            p = replace_all(p, "{classname}", name);
            p = replace_all(p, "\x01", s);
            cp.prompts.push_back(std::move(p));
            cp.sentences.push_back(s);
            if (aligned) {
                cp.attributes.push_back(attribute_name(corpus.attribute_list[i]));
            }
        }
        if (cp.prompts.empty()) {
            throw Error(ErrorCode::EmptyClass, "class '" + name + "' has no non-empty sentences");
        }
        m.classes.push_back(std::move(cp));
    }
    return m;
}

std::string PromptManifest::to_json() const {
    ordered_json j;
    j["dataset_id"] = dataset_id;
    j["template"] = prompt_template;
    j["classes"] = ordered_json::array();
    for (const auto& c : classes) {
        ordered_json e;
        e["class"] = c.class_name;
        e["prompts"] = c.prompts;
        e["sentences"] = c.sentences;
        e["attributes"] = c.attributes;
        j["classes"].push_back(e);
    }
    return j.dump(2) + "\n";
}

PromptManifest PromptManifest::parse(std::string_view json_text) {
    PromptManifest m;
    try {
        const auto j = ordered_json::parse(json_text);
        m.dataset_id = j.value("dataset_id", "");
        m.prompt_template = j.value("template", "");
        for (const auto& e : j.at("classes")) {
            ClassPrompts c;
            c.class_name = e.at("class").get<std::string>();
            c.prompts = e.at("prompts").get<std::vector<std::string>>();
            c.sentences = e.value("sentences", std::vector<std::string>{});
            c.attributes = e.value("attributes", std::vector<std::string>{});
            m.classes.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("prompt manifest JSON: ") + e.what());
    }
    return m;
}

} // namespace vdt
