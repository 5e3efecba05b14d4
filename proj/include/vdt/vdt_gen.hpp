#pragma once

// LLM-generated visually descriptive text (VDT): two-step prompting,
// parsing of the returned dictionary literal, corpus assembly, and the
// prompt manifest handed to the embedding exporter.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vdt {

// Ordered class -> sentences mapping, as parsed from a model response.
using VdtMapping = std::vector<std::pair<std::string, std::vector<std::string>>>;

// ---- prompts ----

inline constexpr std::string_view kDefaultSystemPrompt =
    "You are ChatGPT, a large language model trained by OpenAI. Return only the python dictionary, with no "
    "explanation.";

inline constexpr std::string_view kDefaultPromptTemplate = "A photo of {classname}. {sentence}";

struct PromptStyle {
    std::string dataset_description = "a diverse set of objects"; // "...classify different images of <this>"
    std::string subject_noun = "object";                           // "Describe the following <noun>..."
    std::string key_description = "class name as the key";         // "...python dictionary with the <this> and the value..."
    std::size_t attribute_count = 20;
    std::string system_prompt = std::string(kDefaultSystemPrompt);
};

// First step: ask for the attributes that visually separate the classes.
std::string render_attribute_prompt(const PromptStyle& style, const std::vector<std::string>& class_names);

// Second step: one sentence per attribute for a single class.
std::string render_class_prompt(const PromptStyle& style, const std::string& class_name,
                                const std::vector<std::string>& attribute_lines);

// "Name: description" lines from the first response; bullets and numbering stripped.
std::vector<std::string> parse_attribute_lines(std::string_view text);

// Text before the first ':' of an attribute line.
std::string attribute_name(std::string_view attribute_line);

// ---- response parsing ----

// Parses the first balanced {...} block as a dictionary of string keys to
// lists of strings. Single or double quotes; surrounding prose is ignored.
VdtMapping parse_vdt_response(std::string_view text);

// Double-quoted literal that parse_vdt_response reads back unchanged.
std::string to_python_dict_literal(const VdtMapping& mapping);

// ---- LLM endpoint ----

struct LlmEndpointConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string model_id = "gpt-4";
    std::string token_env = "OPENAI_API_KEY"; // empty: send no Authorization header
    double temperature = 0.0;
    std::size_t max_retries = 3;
    std::chrono::milliseconds timeout{120000};
    std::chrono::milliseconds backoff_base{1000};
    std::chrono::milliseconds backoff_max{30000};
    // Request body with "{{model}}", "{{temperature}}", "{{system}}", "{{user}}"
    // placeholders as whole string values; empty selects chat-completions.
    std::string payload_template;
    // JSON pointer to the reply text in the response body.
    std::string response_pointer = "/choices/0/message/content";

    void validate() const;
    static LlmEndpointConfig from_json(std::string_view json_text);
};

struct ChatResponse {
    std::string content;
    std::size_t attempts = 0;
    std::vector<int> statuses; // HTTP status per attempt, 0 for transport failures
};

class ChatClient {
  public:
    virtual ~ChatClient() = default;
    virtual ChatResponse complete(const std::string& system_prompt, const std::string& user_prompt) = 0;
    [[nodiscard]] virtual std::string model_id() const = 0;
};

// Chat-completions over HTTP(S). Retries transport errors, 408, 429 and 5xx
// with capped exponential backoff (Retry-After honored up to the cap).
// Safe to call from several threads.
class HttpChatClient : public ChatClient {
  public:
    explicit HttpChatClient(LlmEndpointConfig cfg);
    ChatResponse complete(const std::string& system_prompt, const std::string& user_prompt) override;
    [[nodiscard]] std::string model_id() const override { return cfg_.model_id; }

    [[nodiscard]] std::string build_payload(const std::string& system_prompt, const std::string& user_prompt) const;
    [[nodiscard]] std::chrono::milliseconds backoff_delay(std::size_t retry_index) const;

  private:
    LlmEndpointConfig cfg_;
};

// ---- corpus ----

struct ClassProvenance {
    std::string digest; // SHA-256 of the raw response
    std::string fetched_at;
    std::size_t attempts = 0;
};

struct VdtProvenance {
    std::string model;
    std::string attribute_digest;
    std::string created_at;
    std::map<std::string, ClassProvenance> responses;
};

struct VdtCorpus {
    std::string dataset_id;
    std::vector<std::string> attribute_list;
    VdtMapping classes;
    VdtProvenance provenance;

    // Every class has >= 1 sentence; sentences are non-empty and trimmed.
    void validate() const;
    // Additionally every listed class must be present.
    void validate(const std::vector<std::string>& class_names) const;
    [[nodiscard]] const std::vector<std::string>* find(std::string_view class_name) const;

    [[nodiscard]] std::string to_json() const;
    static VdtCorpus parse(std::string_view json_text);
    static VdtCorpus load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

std::string sha256_hex(std::string_view data);

struct AttributeResult {
    std::vector<std::string> attributes;
    std::string raw;
    ChatResponse response;
};

AttributeResult request_attributes(ChatClient& client, const PromptStyle& style,
                                   const std::vector<std::string>& class_names);

struct ClassVdtResult {
    std::vector<std::string> sentences;
    std::string raw;
    std::size_t requests = 0;
    std::size_t attempts = 0;
    std::vector<std::string> rejected; // raw responses that failed to parse
};

// Re-requests up to max_malformed_retries times on a malformed reply.
ClassVdtResult request_class_vdt(ChatClient& client, const PromptStyle& style, const std::string& class_name,
                                 const std::vector<std::string>& attribute_lines, std::size_t max_malformed_retries);

// Sentences for class_name from a parsed reply. The key may drop a
// leading qualifier of the class name (e.g. the manufacturer).
std::vector<std::string> select_class_sentences(const VdtMapping& mapping, const std::string& class_name,
                                                std::size_t expected_count);

struct GenerationOptions {
    std::string dataset_id;
    std::filesystem::path cache_dir;
    std::size_t max_in_flight = 4;
    std::size_t max_malformed_retries = 3;
    std::function<void(const std::string&)> log;
};

struct GenerationResult {
    VdtCorpus corpus;
    std::vector<std::string> quarantined; // classes left for manual repair
    std::size_t cache_hits = 0;
    std::size_t requests = 0;
};

// Generates (or resumes) a corpus. Finished responses are cached under
// cache_dir keyed by the SHA-256 of model and prompt; classes whose replies
// stay malformed are written to cache_dir/quarantine and skipped. A repaired
// reply saved as quarantine/<file>.repaired.txt is picked up on the next run.
GenerationResult generate_corpus(ChatClient& client, const PromptStyle& style,
                                 const std::vector<std::string>& class_names, const GenerationOptions& opts);

// ---- prompt manifest ----

struct ClassPrompts {
    std::string class_name;
    std::vector<std::string> prompts;
    std::vector<std::string> sentences;
    std::vector<std::string> attributes; // empty when the corpus has no aligned schema
};

struct PromptManifest {
    std::string dataset_id;
    std::string prompt_template;
    std::vector<ClassPrompts> classes;
    std::vector<std::string> warnings;

    [[nodiscard]] std::string to_json() const;
    static PromptManifest parse(std::string_view json_text);
};

// One prompt per (class, sentence), template slots {classname} and {sentence}.
PromptManifest assemble_prompts(std::string_view prompt_template, const VdtCorpus& corpus);

} // namespace vdt
