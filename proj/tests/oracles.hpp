#pragma once

// Brute-force scalar references for the metrics, written without sharing
// any code with the library: direct 2-D windows, O(n^2) pair counting.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "unoranic/metrics.hpp"
#include "unoranic/rng.hpp"

namespace oracles {

inline double psnr_ref(const std::vector<float>& a, const std::vector<float>& b) {
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

inline double ssim_ref(const std::vector<float>& a, const std::vector<float>& b, std::size_t c, std::size_t h,
                       std::size_t w) {
    double win[7][7];
    double total = 0.0;
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            win[y][x] = std::exp(-((y - 3) * (y - 3) + (x - 3) * (x - 3)) / (2.0 * 1.5 * 1.5));
            total += win[y][x];
        }
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    double acc = 0.0;
    std::size_t positions = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y0 = 0; y0 + 7 <= h; ++y0) {
            for (std::size_t x0 = 0; x0 + 7 <= w; ++x0) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = 0; y < 7; ++y)
                    for (int x = 0; x < 7; ++x) {
                        const double k = win[y][x] / total;
                        const std::size_t idx = ch * h * w + (y0 + y) * w + (x0 + x);
                        const double va = a[idx];
                        const double vb = b[idx];
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                const double var_a = saa - ma * ma;
                const double var_b = sbb - mb * mb;
                const double cov = sab - ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++positions;
            }
        }
    }
    return acc / static_cast<double>(positions);
}

inline double accuracy_ref(const std::vector<float>& logits, std::size_t k, const std::vector<int>& labels) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[i * k + j] > logits[i * k + best]) best = j;
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& positive) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!positive[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (positive[j]) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

inline std::vector<double> softmax_ref(const std::vector<float>& logits, std::size_t k) {
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size() / k; ++i) {
        double mx = logits[i * k];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[i * k + j] - mx);
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] = std::exp(logits[i * k + j] - mx) / z;
    }
    return p;
}

inline double macro_auc_ref(const std::vector<float>& logits, std::size_t k, const std::vector<int>& labels) {
    const auto p = softmax_ref(logits, k);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> s(labels.size());
        std::vector<int> pos(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            s[i] = p[i * k + c];
            pos[i] = labels[i] == static_cast<int>(c);
        }
        acc += auc_pairs(s, pos);
    }
    return acc / static_cast<double>(k);
}

struct OracleResult {
    std::size_t cases = 0;
    double max_abs_err = 0.0;
    std::string detail;  // metric and case index of the worst disagreement
};

/// Each case draws fresh random images, logits and labels and compares every
/// metric with its reference. Scores are sometimes quantized to force ties.
inline OracleResult run_metric_oracles(std::size_t cases, std::uint64_t seed) {
    using unoranic::rng::Rng;
    OracleResult result;
    auto track = [&](const char* metric, std::size_t i, double got, double want) {
        const double err = std::abs(got - want);
        if (err > result.max_abs_err || std::isnan(err)) {
            result.max_abs_err = std::isnan(err) ? INFINITY : err;
            std::ostringstream os;
            os << metric << " case " << i << ": " << got << " vs " << want;
            result.detail = os.str();
        }
    };
    for (std::size_t i = 0; i < cases; ++i) {
        Rng gen(unoranic::rng::combine(seed, i));
        const std::size_t c = 1 + gen.below(3);
        const std::size_t h = 7 + gen.below(10);
        const std::size_t w = 7 + gen.below(10);
        std::vector<float> a(c * h * w), b(c * h * w);
        const double noise = gen.uniform(0.0, 0.3);
        for (std::size_t j = 0; j < a.size(); ++j) {
            a[j] = static_cast<float>(gen.uniform());
            b[j] = static_cast<float>(std::clamp(a[j] + gen.normal() * noise, 0.0, 1.0));
        }
        const unoranic::ImageDims dims{c, h, w};
        track("psnr", i, unoranic::psnr(a, b), psnr_ref(a, b));
        track("ssim", i, unoranic::ssim(a, b, dims), ssim_ref(a, b, c, h, w));

        const std::size_t k = 2 + gen.below(4);
        const std::size_t n = k * 3 + gen.below(30);
        const bool ties = gen.below(3) == 0;
        std::vector<float> logits(n * k);
        std::vector<int> labels(n);
        for (auto& v : logits) {
            v = static_cast<float>(gen.uniform(-3.0, 3.0));
            if (ties) v = std::round(v);
        }
        for (std::size_t j = 0; j < n; ++j) labels[j] = static_cast<int>(j < k ? j : gen.below(k));
        track("accuracy", i, unoranic::accuracy(logits, k, labels), accuracy_ref(logits, k, labels));
        track("auc_macro", i, unoranic::roc_auc_ovr_macro(logits, k, labels), macro_auc_ref(logits, k, labels));

        std::vector<double> scores(n);
        std::vector<int> binary(n);
        for (std::size_t j = 0; j < n; ++j) {
            scores[j] = ties ? std::round(gen.uniform(0.0, 4.0)) : gen.uniform();
            binary[j] = j < 2 ? static_cast<int>(j) : static_cast<int>(gen.below(2));
        }
        track("auc_binary", i, unoranic::roc_auc_binary(scores, binary), auc_pairs(scores, binary));
        ++result.cases;
    }
    return result;
}

}  // namespace oracles
