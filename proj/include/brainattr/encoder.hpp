#pragma once

#include <string>
#include <vector>

#include "brainattr/stimulus.hpp"
#include "brainattr/tensor.hpp"

namespace brainattr {

struct ResponseMatrix {
    Tensor values;  // (K, V)
    int subject = 0;
    std::vector<std::pair<int, int>> row_trs;  // aligned one-to-one with design rows
};

void save_responses(const ResponseMatrix& responses, const std::string& path);
ResponseMatrix load_responses(const std::string& path);

struct FoldSpec {
    std::vector<std::vector<int64_t>> outer;  // disjoint row-index sets covering all rows
    int inner = 3;

    void validate(int64_t rows) const;
};

FoldSpec make_contiguous_folds(int64_t rows, int n_outer, int inner);

// Closed-form ridge solution W = argmin |XW - Y|^2 + lambda |W|^2 on raw
// (unnormalized) inputs. lambda = 0 with a rank-deficient X raises
// numerical_error carrying a condition estimate.
Tensor fit_ridge(const Tensor& x, const Tensor& y, double lambda);

struct EncodingModel {
    int layer = 0;
    int subject = 0;
    int delay_depth = 0;
    int hidden = 0;

    // Refit on all rows in z-scored space; this is the matrix the attribution
    // heads decompose.
    Tensor weights;  // (D*H, V)
    std::vector<double> x_mean, x_std;  // full-data design column stats
    std::vector<double> y_mean, y_std;  // full-data voxel stats

    struct Fold {
        std::vector<int64_t> test_rows;
        double lambda = 0.0;
        Tensor weights;  // trained on the fold's train rows, z-scored space
        std::vector<double> x_mean, x_std, y_mean, y_std;
    };
    std::vector<Fold> folds;
    double refit_lambda = 0.0;

    // z-scores a raw design row and applies the weights, accumulating one
    // delay block at a time; bit-identical to summing the per-delay heads.
    std::vector<double> predict_row(const std::vector<double>& raw_row) const;
    // Mean squared error of one TR in z-scored voxel space.
    double tr_mse(const std::vector<double>& raw_row, const std::vector<double>& raw_y) const;
    std::vector<double> zscore_y(const std::vector<double>& raw_y) const;
};

struct AlignmentScore {
    std::vector<double> voxel_r;
    double mean_r = 0.0;
};

// Nested cross-validation: per outer fold the regularization strength is
// chosen on inner folds of the outer-train split, by mean Pearson r. Held-out
// predictions come only from train-fitted weights and train-derived
// normalization. Returns the model (per-fold weights plus a full-data refit
// at the median selected lambda) and out-of-sample scores.
EncodingModel nested_cv(const DesignMatrix& design, const ResponseMatrix& responses,
                        const FoldSpec& folds, const std::vector<double>& lambda_grid,
                        AlignmentScore* score);

// Out-of-sample per-voxel Pearson of an (optionally perturbed) design against
// responses, predicting each fold's test rows with that fold's weights.
std::vector<double> held_out_voxel_r(const EncodingModel& model, const DesignMatrix& design,
                                     const ResponseMatrix& responses);

// Standard Pearson per column; a constant column on either side gives r = 0.
std::vector<double> pearson_per_voxel(const Tensor& predicted, const Tensor& actual);
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Per-delay projection heads g_d of shape (H, V); restacking them vertically
// reproduces the weight matrix bit-exactly.
std::vector<Tensor> decompose_weights(const EncodingModel& model);

struct SelectedLayers {
    int early = 0;
    int middle = 0;
    int late = 0;
};

// One layer per depth third, highest mean score, ties toward the shallower
// layer. Requires n_layers >= 3.
SelectedLayers select_layers(const std::vector<double>& per_layer_score, int n_layers);

std::vector<double> default_lambda_grid();  // 10 log points, 1e-3 .. 1e6

void save_encoder(const EncodingModel& model, const std::string& path);
EncodingModel load_encoder(const std::string& path);

}  // namespace brainattr
