#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace unoranic {

/// Images compared by the reconstruction metrics share this geometry.
struct ImageDims {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const noexcept { return channels * height * width; }
};

inline constexpr double kPsnrCap = 100.0;

/// 10*log10(max_val^2 / MSE) in dB; MSE below 1e-10 reports kPsnrCap.
double psnr(std::span<const float> a, std::span<const float> b, double max_val = 1.0);

/// Gaussian-windowed SSIM: 7x7 window with sigma 1.5, C1 = 0.01^2,
/// C2 = 0.03^2 (dynamic range 1), valid positions only, averaged over
/// positions and channels. Needs H, W >= 7.
double ssim(std::span<const float> a, std::span<const float> b, const ImageDims& dims);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(std::span<const float> logits, std::size_t classes, std::span<const int> labels);

enum class AucMode { binary, ovr_macro };

/// Tie-aware rank-statistic AUC: P(s+ > s-) + P(s+ == s-)/2.
/// Labels are 0/1. Throws UndefinedMetricError unless both classes occur.
double roc_auc_binary(std::span<const double> scores, std::span<const int> labels);

/// Unweighted mean of one-vs-rest AUCs over softmax probabilities.
/// Every class in [0, classes) must occur.
double roc_auc_ovr_macro(std::span<const float> logits, std::size_t classes, std::span<const int> labels);

/// Binary mode scores with the class-1 softmax probability of [N,2] logits.
double roc_auc(std::span<const float> logits, std::size_t classes, std::span<const int> labels, AucMode mode);

/// ovr_macro for more than two classes, binary otherwise.
double classification_auc(std::span<const float> logits, std::size_t classes, std::span<const int> labels);

/// Row-wise softmax of [N,K] logits in double precision.
std::vector<double> softmax_rows(std::span<const float> logits, std::size_t classes);

struct ReportRow {
    std::string sample_id;
    std::string metric;
    double value = 0.0;
    std::string annotation;
};

/// Per-metric, per-group summary. For mean aggregates `value` is the mean of
/// the member rows; set-level metrics (AUC) carry their own value.
struct Aggregate {
    std::string metric;
    std::string group;
    double value = 0.0;
    std::size_t count = 0;
};

class EvalReport {
public:
    void add_row(std::string sample_id, std::string metric, double value, std::string annotation = {});
    void add_aggregate(std::string metric, std::string group, double value, std::size_t count);

    /// Appends one mean aggregate per (metric, annotation) pair present in the
    /// rows, in first-appearance order.
    void aggregate_means();

    const std::vector<ReportRow>& rows() const noexcept { return rows_; }
    const std::vector<Aggregate>& aggregates() const noexcept { return aggregates_; }
    const Aggregate* find_aggregate(const std::string& metric, const std::string& group) const;

    /// Per-sample rows sorted by sample id (stable), so reports merged from
    /// parallel workers serialize identically.
    void sort_rows();

    /// CSV with header `sample_id,metric,value,annotation`, LF line endings,
    /// six decimals. Aggregates follow the rows with sample_id "aggregate".
    void write_csv(std::ostream& os) const;
    void write_csv(const std::string& path) const;

private:
    std::vector<ReportRow> rows_;
    std::vector<Aggregate> aggregates_;
};

}  // namespace unoranic
