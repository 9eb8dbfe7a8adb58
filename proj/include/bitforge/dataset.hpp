#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bitforge/common.hpp"

namespace bitforge {
namespace data {

// y_g / y_p / y_q in the run reports
enum class Source { ground_truth, teacher_gen, student_gen };

const char* source_name(Source s);
Source source_from_name(const std::string& name);

struct Record {
    std::vector<int32_t> prompt;
    std::vector<int32_t> response;  // non-empty
    Source source = Source::ground_truth;
};

struct Dataset {
    std::vector<Record> records;

    size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

// byte-level tokenizer: one token per byte
std::vector<int32_t> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(std::span<const int32_t> ids);

// Next-token training batch. Row r holds prompt+response truncated from the
// front to fit max_len+1 tokens, padded on the right with id 0; mask is 1.0
// exactly on predictions of response tokens.
struct TokenBatch {
    std::vector<int32_t> inputs;   // batch x len
    std::vector<int32_t> targets;  // batch x len
    std::vector<double> mask;      // batch x len
    int64_t batch = 0;
    int64_t len = 0;

    double active_count() const;
};

TokenBatch make_batch(std::span<const Record> records, int64_t max_len);

// deterministic windows over a token stream: prompt_len + response_len tokens
// per record, wrapping around the corpus
Dataset ground_truth_from_corpus(const std::vector<int32_t>& corpus, int64_t prompt_len,
                                 int64_t response_len, int64_t count);

// proportional interleave; weights need not be normalized
Dataset mix_datasets(const std::vector<Dataset>& parts, const std::vector<double>& weights,
                     uint64_t seed);

}  // namespace data
}  // namespace bitforge
