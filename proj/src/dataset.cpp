#include "bitforge/dataset.hpp"

#include <algorithm>

namespace bitforge {
namespace data {

const char* source_name(Source s) {
    switch (s) {
        case Source::ground_truth: return "y_g";
        case Source::teacher_gen: return "y_p";
        case Source::student_gen: return "y_q";
    }
    return "?";
}

Source source_from_name(const std::string& name) {
    if (name == "y_g" || name == "ground_truth") return Source::ground_truth;
    if (name == "y_p" || name == "teacher_gen") return Source::teacher_gen;
    if (name == "y_q" || name == "student_gen") return Source::student_gen;
    fail(ErrorKind::data, "unknown data source tag '", name, "'");
}

std::vector<int32_t> tokenize_bytes(std::string_view text) {
    std::vector<int32_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<int32_t>(static_cast<unsigned char>(c)));
    return ids;
}

std::string detokenize_bytes(std::span<const int32_t> ids) {
    std::string s;
    s.reserve(ids.size());
    for (int32_t id : ids) s.push_back(static_cast<char>(static_cast<unsigned char>(id & 0xff)));
    return s;
}

double TokenBatch::active_count() const {
    double c = 0.0;
    for (double m : mask) c += m;
    return c;
}

TokenBatch make_batch(std::span<const Record> records, int64_t max_len) {
    if (records.empty()) fail(ErrorKind::contract, "make_batch: no records");
    if (max_len < 1) fail(ErrorKind::contract, "make_batch: max_len must be >= 1");

    struct Row {
        std::vector<int32_t> seq;  // prompt + response, front-truncated
        int64_t response_start;    // index into seq of the first response token
    };
    std::vector<Row> rows;
    rows.reserve(records.size());
    int64_t len = 0;
    for (const Record& rec : records) {
        if (rec.response.empty()) fail(ErrorKind::contract, "make_batch: empty response");
        Row row;
        row.seq.reserve(rec.prompt.size() + rec.response.size());
        row.seq.insert(row.seq.end(), rec.prompt.begin(), rec.prompt.end());
        row.seq.insert(row.seq.end(), rec.response.begin(), rec.response.end());
        row.response_start = static_cast<int64_t>(rec.prompt.size());
        const int64_t limit = max_len + 1;
        if (static_cast<int64_t>(row.seq.size()) > limit) {
            const int64_t cut = static_cast<int64_t>(row.seq.size()) - limit;
            row.seq.erase(row.seq.begin(), row.seq.begin() + cut);
            row.response_start = std::max<int64_t>(0, row.response_start - cut);
        }
        if (static_cast<int64_t>(row.seq.size()) < 2)
            fail(ErrorKind::contract, "make_batch: sequence too short to predict anything");
        len = std::max(len, static_cast<int64_t>(row.seq.size()) - 1);
        rows.push_back(std::move(row));
    }

    TokenBatch b;
    b.batch = static_cast<int64_t>(rows.size());
    b.len = len;
    b.inputs.assign(static_cast<size_t>(b.batch * len), 0);
    b.targets.assign(static_cast<size_t>(b.batch * len), 0);
    b.mask.assign(static_cast<size_t>(b.batch * len), 0.0);
    for (int64_t r = 0; r < b.batch; ++r) {
        const Row& row = rows[static_cast<size_t>(r)];
        const int64_t n = static_cast<int64_t>(row.seq.size());
        bool any = false;
        for (int64_t i = 0; i + 1 < n; ++i) {
            b.inputs[static_cast<size_t>(r * len + i)] = row.seq[static_cast<size_t>(i)];
            b.targets[static_cast<size_t>(r * len + i)] = row.seq[static_cast<size_t>(i + 1)];
            // position i predicts token i+1; active when that token is response
            if (i + 1 >= row.response_start) {
                b.mask[static_cast<size_t>(r * len + i)] = 1.0;
                any = true;
            }
        }
        if (!any) fail(ErrorKind::contract, "make_batch: row ", r, " has no response predictions");
    }
    return b;
}

Dataset ground_truth_from_corpus(const std::vector<int32_t>& corpus, int64_t prompt_len,
                                 int64_t response_len, int64_t count) {
    if (prompt_len < 1 || response_len < 1 || count < 1)
        fail(ErrorKind::contract, "ground_truth_from_corpus: lengths and count must be positive");
    const int64_t window = prompt_len + response_len;
    if (static_cast<int64_t>(corpus.size()) < window)
        fail(ErrorKind::contract, "corpus shorter than one prompt+response window");

    Dataset ds;
    ds.records.reserve(static_cast<size_t>(count));
    const int64_t span = static_cast<int64_t>(corpus.size()) - window + 1;
    for (int64_t k = 0; k < count; ++k) {
        const int64_t off = (k * window) % span;
        Record rec;
        rec.source = Source::ground_truth;
        rec.prompt.assign(corpus.begin() + off, corpus.begin() + off + prompt_len);
        rec.response.assign(corpus.begin() + off + prompt_len, corpus.begin() + off + window);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

Dataset mix_datasets(const std::vector<Dataset>& parts, const std::vector<double>& weights,
                     uint64_t seed) {
    if (parts.size() != weights.size())
        fail(ErrorKind::contract, "mix_datasets: one weight per part required");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) fail(ErrorKind::contract, "mix_datasets: negative weight");
        total += w;
    }
    if (total <= 0.0) fail(ErrorKind::contract, "mix_datasets: weights sum to zero");

    size_t grand = 0;
    for (const Dataset& d : parts) grand += d.size();

    Dataset out;
    out.records.reserve(grand);
    Rng rng(seed);
    for (size_t i = 0; i < parts.size(); ++i) {
        const double share = weights[i] / total;
        const auto take = static_cast<size_t>(std::min<double>(
            static_cast<double>(parts[i].size()),
            std::round(share * static_cast<double>(grand))));
        for (size_t k = 0; k < take; ++k) out.records.push_back(parts[i].records[k]);
    }
    // deterministic shuffle so sources interleave
    for (size_t i = out.records.size(); i > 1; --i)
        std::swap(out.records[i - 1], out.records[rng.below(i)]);
    return out;
}

}  // namespace data
}  // namespace bitforge
