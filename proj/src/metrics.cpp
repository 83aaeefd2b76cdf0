#include "unoranic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <utility>

#include "unoranic/error.hpp"

namespace unoranic {

namespace {

constexpr std::size_t kWindow = 7;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double total = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
        const double d = static_cast<double>(i) - 3.0;
        w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Valid-region separable filtering of one plane: [h,w] -> [h-6, w-6].
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
    const std::size_t oh = h - kWindow + 1;
    const std::size_t ow = w - kWindow + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t t = 0; t < kWindow; ++t) acc += g[t] * plane[y * w + x + t];
            rows[y * ow + x] = acc;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t t = 0; t < kWindow; ++t) acc += g[t] * rows[(y + t) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

void require_same(std::span<const float> a, std::span<const float> b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": inputs have " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()) + " values");
    }
}

std::vector<int> checked_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* what) {
    if (labels.size() != rows) {
        throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    }
    for (const int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw DimensionError(std::string(what) + ": label " + std::to_string(l) + " outside [0," +
                                 std::to_string(classes) + ")");
        }
    }
    return {labels.begin(), labels.end()};
}

std::string format_value(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b, double max_val) {
    require_same(a, b, "psnr");
    if (a.empty()) throw DimensionError("psnr of empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    const double m = acc / static_cast<double>(a.size());
    if (!std::isfinite(m)) throw NumericError("psnr input is not finite");
    if (m < 1e-10) return kPsnrCap;
    return 10.0 * std::log10(max_val * max_val / m);
}

double ssim(std::span<const float> a, std::span<const float> b, const ImageDims& dims) {
    require_same(a, b, "ssim");
    if (a.size() != dims.size()) throw DimensionError("ssim: image size does not match its dimensions");
    if (dims.height < kWindow || dims.width < kWindow) {
        throw DimensionError("ssim needs images of at least 7x7, got " + std::to_string(dims.height) + "x" +
                             std::to_string(dims.width));
    }
    const auto g = gaussian_window();
    const std::size_t plane = dims.height * dims.width;
    double total = 0.0;
    std::size_t positions = 0;
    for (std::size_t c = 0; c < dims.channels; ++c) {
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            x[i] = a[c * plane + i];
            y[i] = b[c * plane + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, dims.height, dims.width, g);
        const auto my = filter_valid(y, dims.height, dims.width, g);
        const auto mxx = filter_valid(xx, dims.height, dims.width, g);
        const auto myy = filter_valid(yy, dims.height, dims.width, g);
        const auto mxy = filter_valid(xy, dims.height, dims.width, g);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i];
            const double vy = myy[i] - my[i] * my[i];
            const double cxy = mxy[i] - mx[i] * my[i];
            total += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
        }
        positions += mx.size();
    }
    return total / static_cast<double>(positions);
}

double accuracy(std::span<const float> logits, std::size_t classes, std::span<const int> labels) {
    if (classes == 0 || logits.size() % classes != 0) throw DimensionError("accuracy: logits are not [N,K]");
    const std::size_t rows = logits.size() / classes;
    const auto lab = checked_labels(labels, rows, classes, "accuracy");
    if (rows == 0) throw UndefinedMetricError("accuracy of an empty set is undefined");
    std::size_t correct = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = logits.subspan(r * classes, classes);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += best == lab[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(rows);
}

double roc_auc_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("roc_auc: scores and labels differ in length");
    std::size_t pos = 0;
    for (const int l : labels) {
        if (l != 0 && l != 1) throw DimensionError("roc_auc: binary labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetricError("roc_auc is undefined unless both classes are present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
    // Mid-ranks (1-based) over tie groups; sum them for positives.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]] == 1) rank_sum += mid;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<double> softmax_rows(std::span<const float> logits, std::size_t classes) {
    if (classes == 0 || logits.size() % classes != 0) throw DimensionError("softmax_rows: logits are not [N,K]");
    std::vector<double> probs(logits.size());
    for (std::size_t r = 0; r < logits.size() / classes; ++r) {
        const auto row = logits.subspan(r * classes, classes);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            probs[r * classes + j] = std::exp(static_cast<double>(row[j]) - mx);
            z += probs[r * classes + j];
        }
        for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] /= z;
    }
    return probs;
}

double roc_auc_ovr_macro(std::span<const float> logits, std::size_t classes, std::span<const int> labels) {
    const auto probs = softmax_rows(logits, classes);
    const std::size_t rows = logits.size() / classes;
    const auto lab = checked_labels(labels, rows, classes, "roc_auc");
    double total = 0.0;
    std::vector<double> scores(rows);
    std::vector<int> onehot(rows);
    for (std::size_t c = 0; c < classes; ++c) {
        bool present = false;
        for (std::size_t r = 0; r < rows; ++r) {
            scores[r] = probs[r * classes + c];
            onehot[r] = lab[r] == static_cast<int>(c) ? 1 : 0;
            present = present || onehot[r] == 1;
        }
        if (!present) throw UndefinedMetricError("macro roc_auc is undefined: class " + std::to_string(c) + " is absent");
        total += roc_auc_binary(scores, onehot);
    }
    return total / static_cast<double>(classes);
}

double roc_auc(std::span<const float> logits, std::size_t classes, std::span<const int> labels, AucMode mode) {
    if (mode == AucMode::ovr_macro) return roc_auc_ovr_macro(logits, classes, labels);
    if (classes != 2) throw DimensionError("binary roc_auc needs [N,2] logits");
    const auto probs = softmax_rows(logits, classes);
    const std::size_t rows = logits.size() / classes;
    const auto lab = checked_labels(labels, rows, classes, "roc_auc");
    std::vector<double> scores(rows);
    for (std::size_t r = 0; r < rows; ++r) scores[r] = probs[r * 2 + 1];
    return roc_auc_binary(scores, lab);
}

double classification_auc(std::span<const float> logits, std::size_t classes, std::span<const int> labels) {
    return roc_auc(logits, classes, labels, classes > 2 ? AucMode::ovr_macro : AucMode::binary);
}

void EvalReport::add_row(std::string sample_id, std::string metric, double value, std::string annotation) {
    rows_.push_back({std::move(sample_id), std::move(metric), value, std::move(annotation)});
}

void EvalReport::add_aggregate(std::string metric, std::string group, double value, std::size_t count) {
    aggregates_.push_back({std::move(metric), std::move(group), value, count});
}

void EvalReport::aggregate_means() {
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> sums;
    for (const auto& r : rows_) {
        auto key = std::make_pair(r.metric, r.annotation);
        auto [it, fresh] = sums.try_emplace(key, 0.0, 0);
        if (fresh) keys.push_back(key);
        it->second.first += r.value;
        it->second.second += 1;
    }
    for (const auto& key : keys) {
        const auto& [total, count] = sums.at(key);
        add_aggregate(key.first, key.second, total / static_cast<double>(count), count);
    }
}

const Aggregate* EvalReport::find_aggregate(const std::string& metric, const std::string& group) const {
    for (const auto& a : aggregates_) {
        if (a.metric == metric && a.group == group) return &a;
    }
    return nullptr;
}

void EvalReport::sort_rows() {
    std::stable_sort(rows_.begin(), rows_.end(),
                     [](const ReportRow& a, const ReportRow& b) { return a.sample_id < b.sample_id; });
}

void EvalReport::write_csv(std::ostream& os) const {
    os << "sample_id,metric,value,annotation\n";
    for (const auto& r : rows_) os << r.sample_id << ',' << r.metric << ',' << format_value(r.value) << ',' << r.annotation << '\n';
    for (const auto& a : aggregates_) os << "aggregate," << a.metric << ',' << format_value(a.value) << ',' << a.group << '\n';
}

void EvalReport::write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write report " + path);
    write_csv(os);
    if (!os) throw IoError("failed while writing report " + path);
}

}  // namespace unoranic
