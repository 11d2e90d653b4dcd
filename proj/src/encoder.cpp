#include "brainattr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <Eigen/Dense>

#include "brainattr/io_util.hpp"

namespace brainattr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;

MapMat as_eigen(const Tensor& t) { return MapMat(t.values.data(), t.rows(), t.cols()); }

Tensor from_eigen(const RowMat& m) {
    Tensor t = Tensor::zeros(m.rows(), m.cols());
    std::copy(m.data(), m.data() + m.size(), t.values.data());
    return t;
}

// Eigendecomposition of X^T X, reused across the lambda grid.
struct RidgeSolver {
    RidgeSolver(const Tensor& x, const Tensor& y) {
        const MapMat xm = as_eigen(x);
        const MapMat ym = as_eigen(y);
        Eigen::MatrixXd gram = xm.transpose() * xm;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        if (eig.info() != Eigen::Success) throw numerical_error("ridge: eigendecomposition failed");
        q = eig.eigenvectors();
        evals = eig.eigenvalues();
        qtxty = q.transpose() * (xm.transpose() * ym).eval();
    }

    Tensor solve(double lambda) const {
        const double max_ev = evals.maxCoeff();
        const double min_ev = evals.minCoeff();
        if (lambda == 0.0 && (max_ev <= 0.0 || min_ev / max_ev < 1e-12)) {
            throw numerical_error(
                "ridge: singular system at lambda=0; condition estimate " +
                format_double(max_ev / std::max(min_ev, 1e-300)));
        }
        Eigen::VectorXd inv = (evals.array() + lambda).inverse().matrix();
        RowMat w = q * inv.asDiagonal() * qtxty;
        return from_eigen(w);
    }

    Eigen::MatrixXd q;
    Eigen::VectorXd evals;
    Eigen::MatrixXd qtxty;
};

struct ColumnStats {
    std::vector<double> mean, std;
};

ColumnStats column_stats(const Tensor& m, const std::vector<int64_t>& rows) {
    const int64_t c = m.cols();
    ColumnStats s;
    s.mean.assign(static_cast<size_t>(c), 0.0);
    s.std.assign(static_cast<size_t>(c), 0.0);
    for (int64_t r : rows)
        for (int64_t j = 0; j < c; ++j) s.mean[static_cast<size_t>(j)] += m.at(r, j);
    for (auto& v : s.mean) v /= static_cast<double>(rows.size());
    for (int64_t r : rows)
        for (int64_t j = 0; j < c; ++j) {
            const double d = m.at(r, j) - s.mean[static_cast<size_t>(j)];
            s.std[static_cast<size_t>(j)] += d * d;
        }
    for (auto& v : s.std) {
        v = std::sqrt(v / static_cast<double>(rows.size()));
        if (v == 0.0) v = 1.0;  // constant column: leave it centered at zero
    }
    return s;
}

Tensor zscore_rows(const Tensor& m, const std::vector<int64_t>& rows, const ColumnStats& s) {
    const int64_t c = m.cols();
    Tensor out = Tensor::zeros(static_cast<int64_t>(rows.size()), c);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t j = 0; j < c; ++j)
            out.at(static_cast<int64_t>(i), j) =
                (m.at(rows[i], j) - s.mean[static_cast<size_t>(j)]) / s.std[static_cast<size_t>(j)];
    return out;
}

std::vector<int64_t> all_rows(int64_t n) {
    std::vector<int64_t> rows(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = i;
    return rows;
}

}  // namespace

void save_responses(const ResponseMatrix& responses, const std::string& path) {
    BinaryWriter w;
    w.str("BARM");
    w.u32(1);
    w.u32(static_cast<uint32_t>(responses.subject));
    w.u64(static_cast<uint64_t>(responses.values.rows()));
    w.u64(static_cast<uint64_t>(responses.values.cols()));
    for (const auto& [run, tr] : responses.row_trs) {
        w.u32(static_cast<uint32_t>(run));
        w.u32(static_cast<uint32_t>(tr));
    }
    w.f64_array(responses.values.values);
    write_file_atomic(path, w.buffer());
}

ResponseMatrix load_responses(const std::string& path) {
    BinaryReader r(read_file(path));
    if (r.str() != "BARM") throw invalid_input("response file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("response file: unsupported version");
    ResponseMatrix m;
    m.subject = static_cast<int>(r.u32());
    const uint64_t rows = r.u64();
    const uint64_t cols = r.u64();
    for (uint64_t i = 0; i < rows; ++i) {
        const int run = static_cast<int>(r.u32());
        const int tr = static_cast<int>(r.u32());
        m.row_trs.emplace_back(run, tr);
    }
    m.values = Tensor({static_cast<int64_t>(rows), static_cast<int64_t>(cols)}, r.f64_array(rows * cols));
    return m;
}

void FoldSpec::validate(int64_t rows) const {
    std::vector<char> seen(static_cast<size_t>(rows), 0);
    for (const auto& fold : outer)
        for (int64_t r : fold) {
            if (r < 0 || r >= rows) throw invalid_input("folds: row index out of range");
            if (seen[static_cast<size_t>(r)]) throw invalid_input("folds: row appears in two folds");
            seen[static_cast<size_t>(r)] = 1;
        }
    for (char c : seen)
        if (!c) throw invalid_input("folds: outer folds must partition all rows");
    if (inner < 2) throw invalid_input("folds: need at least 2 inner folds");
}

FoldSpec make_contiguous_folds(int64_t rows, int n_outer, int inner) {
    if (n_outer < 2) throw invalid_input("folds: need at least 2 outer folds");
    if (rows < n_outer) throw invalid_input("folds: fewer rows than folds");
    FoldSpec spec;
    spec.inner = inner;
    const int64_t base = rows / n_outer;
    const int64_t extra = rows % n_outer;
    int64_t start = 0;
    for (int f = 0; f < n_outer; ++f) {
        const int64_t len = base + (f < extra ? 1 : 0);
        std::vector<int64_t> fold(static_cast<size_t>(len));
        for (int64_t i = 0; i < len; ++i) fold[static_cast<size_t>(i)] = start + i;
        spec.outer.push_back(std::move(fold));
        start += len;
    }
    spec.validate(rows);
    return spec;
}

Tensor fit_ridge(const Tensor& x, const Tensor& y, double lambda) {
    if (lambda < 0) throw invalid_input("ridge: lambda must be >= 0");
    if (x.rows() != y.rows()) throw invalid_input("ridge: row counts differ");
    if (x.rows() < 1) throw invalid_input("ridge: empty training set");
    return RidgeSolver(x, y).solve(lambda);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw invalid_input("pearson: need >= 2 paired values");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;  // constant series convention
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> pearson_per_voxel(const Tensor& predicted, const Tensor& actual) {
    if (!same_shape(predicted, actual)) throw invalid_input("pearson: shapes differ");
    if (predicted.rows() < 2) throw invalid_input("pearson: need >= 2 rows");
    std::vector<double> out(static_cast<size_t>(predicted.cols()));
    std::vector<double> p(static_cast<size_t>(predicted.rows())), q(static_cast<size_t>(predicted.rows()));
    for (int64_t j = 0; j < predicted.cols(); ++j) {
        for (int64_t r = 0; r < predicted.rows(); ++r) {
            p[static_cast<size_t>(r)] = predicted.at(r, j);
            q[static_cast<size_t>(r)] = actual.at(r, j);
        }
        out[static_cast<size_t>(j)] = pearson(p, q);
    }
    return out;
}

EncodingModel nested_cv(const DesignMatrix& design, const ResponseMatrix& responses,
                        const FoldSpec& folds, const std::vector<double>& lambda_grid,
                        AlignmentScore* score) {
    if (lambda_grid.empty()) throw invalid_input("nested_cv: empty lambda grid");
    const Tensor& x = design.values;
    const Tensor& y = responses.values;
    if (x.rows() != y.rows()) throw invalid_input("nested_cv: design/response row mismatch");
    if (design.row_trs != responses.row_trs)
        throw invalid_input("nested_cv: design and response rows cover different TRs");
    folds.validate(x.rows());

    EncodingModel model;
    model.layer = design.layer;
    model.subject = responses.subject;
    model.delay_depth = design.delay_depth;
    model.hidden = design.hidden;

    const int64_t v = y.cols();
    Tensor oos_pred = Tensor::zeros(x.rows(), v);
    std::vector<char> predicted(static_cast<size_t>(x.rows()), 0);

    for (const auto& test_rows : folds.outer) {
        if (test_rows.size() < 2) {
            std::cerr << "warning: outer fold with " << test_rows.size()
                      << " test rows skipped (Pearson undefined)\n";
            continue;
        }
        std::vector<char> in_test(static_cast<size_t>(x.rows()), 0);
        for (int64_t r : test_rows) in_test[static_cast<size_t>(r)] = 1;
        std::vector<int64_t> train_rows;
        for (int64_t r = 0; r < x.rows(); ++r)
            if (!in_test[static_cast<size_t>(r)]) train_rows.push_back(r);

        // Inner folds: contiguous chunks of the outer-train rows.
        const int inner = folds.inner;
        std::vector<std::vector<int64_t>> inner_folds(static_cast<size_t>(inner));
        for (size_t i = 0; i < train_rows.size(); ++i)
            inner_folds[i * static_cast<size_t>(inner) / train_rows.size()].push_back(train_rows[i]);

        std::vector<double> lambda_mean_r(lambda_grid.size(), 0.0);
        int used_inner = 0;
        for (int k = 0; k < inner; ++k) {
            const auto& val_rows = inner_folds[static_cast<size_t>(k)];
            if (val_rows.size() < 2) continue;
            std::vector<int64_t> fit_rows;
            for (int j = 0; j < inner; ++j)
                if (j != k)
                    fit_rows.insert(fit_rows.end(), inner_folds[static_cast<size_t>(j)].begin(),
                                    inner_folds[static_cast<size_t>(j)].end());
            if (fit_rows.size() < 2) continue;
            const ColumnStats xs = column_stats(x, fit_rows);
            const ColumnStats ys = column_stats(y, fit_rows);
            const Tensor xz = zscore_rows(x, fit_rows, xs);
            const Tensor yz = zscore_rows(y, fit_rows, ys);
            const RidgeSolver solver(xz, yz);
            const Tensor xv = zscore_rows(x, val_rows, xs);
            const Tensor yv = zscore_rows(y, val_rows, ys);
            for (size_t li = 0; li < lambda_grid.size(); ++li) {
                const Tensor w = solver.solve(lambda_grid[li]);
                Tensor pred = Tensor::zeros(xv.rows(), v);
                Eigen::Map<RowMat>(pred.values.data(), pred.rows(), pred.cols()) =
                    as_eigen(xv) * as_eigen(w);
                const auto r = pearson_per_voxel(pred, yv);
                double mean = 0;
                for (double rv : r) mean += rv;
                lambda_mean_r[li] += mean / static_cast<double>(r.size());
            }
            ++used_inner;
        }
        if (used_inner == 0) throw invalid_input("nested_cv: all inner folds degenerate");

        size_t best = 0;
        for (size_t li = 1; li < lambda_grid.size(); ++li)
            if (lambda_mean_r[li] > lambda_mean_r[best]) best = li;
        const double lambda = lambda_grid[best];

        EncodingModel::Fold fold;
        fold.test_rows = test_rows;
        fold.lambda = lambda;
        const ColumnStats xs = column_stats(x, train_rows);
        const ColumnStats ys = column_stats(y, train_rows);
        fold.x_mean = xs.mean;
        fold.x_std = xs.std;
        fold.y_mean = ys.mean;
        fold.y_std = ys.std;
        fold.weights = fit_ridge(zscore_rows(x, train_rows, xs), zscore_rows(y, train_rows, ys), lambda);

        const Tensor xt = zscore_rows(x, test_rows, xs);
        RowMat pred = as_eigen(xt) * as_eigen(fold.weights);
        for (size_t i = 0; i < test_rows.size(); ++i) {
            for (int64_t j = 0; j < v; ++j)
                oos_pred.at(test_rows[i], j) =
                    pred(static_cast<int64_t>(i), j) * ys.std[static_cast<size_t>(j)] + ys.mean[static_cast<size_t>(j)];
            predicted[static_cast<size_t>(test_rows[i])] = 1;
        }
        model.folds.push_back(std::move(fold));
    }

    if (model.folds.empty()) throw invalid_input("nested_cv: no usable outer folds");

    // Refit on all rows at the median selected lambda (lower median on even
    // counts) for the attribution heads.
    std::vector<double> lambdas;
    for (const auto& f : model.folds) lambdas.push_back(f.lambda);
    std::sort(lambdas.begin(), lambdas.end());
    model.refit_lambda = lambdas[(lambdas.size() - 1) / 2];
    const auto rows = all_rows(x.rows());
    const ColumnStats xs = column_stats(x, rows);
    const ColumnStats ys = column_stats(y, rows);
    model.x_mean = xs.mean;
    model.x_std = xs.std;
    model.y_mean = ys.mean;
    model.y_std = ys.std;
    model.weights = fit_ridge(zscore_rows(x, rows, xs), zscore_rows(y, rows, ys), model.refit_lambda);

    if (score) {
        std::vector<int64_t> scored_rows;
        for (int64_t r = 0; r < x.rows(); ++r)
            if (predicted[static_cast<size_t>(r)]) scored_rows.push_back(r);
        Tensor pred_used = Tensor::zeros(static_cast<int64_t>(scored_rows.size()), v);
        Tensor actual_used = Tensor::zeros(static_cast<int64_t>(scored_rows.size()), v);
        for (size_t i = 0; i < scored_rows.size(); ++i)
            for (int64_t j = 0; j < v; ++j) {
                pred_used.at(static_cast<int64_t>(i), j) = oos_pred.at(scored_rows[i], j);
                actual_used.at(static_cast<int64_t>(i), j) = y.at(scored_rows[i], j);
            }
        score->voxel_r = pearson_per_voxel(pred_used, actual_used);
        score->mean_r = 0;
        for (double r : score->voxel_r) score->mean_r += r;
        score->mean_r /= static_cast<double>(score->voxel_r.size());
    }
    return model;
}

std::vector<double> held_out_voxel_r(const EncodingModel& model, const DesignMatrix& design,
                                     const ResponseMatrix& responses) {
    const Tensor& x = design.values;
    const Tensor& y = responses.values;
    if (x.rows() != y.rows()) throw invalid_input("held_out: design/response row mismatch");
    std::vector<int64_t> scored_rows;
    Tensor pred = Tensor::zeros(x.rows(), y.cols());
    for (const auto& fold : model.folds) {
        for (int64_t r : fold.test_rows) {
            scored_rows.push_back(r);
            for (int64_t j = 0; j < y.cols(); ++j) {
                double acc = 0.0;
                // blockwise accumulation mirrors predict_row
                const int64_t h = model.hidden;
                for (int d = 0; d < model.delay_depth; ++d) {
                    double part = 0.0;
                    for (int64_t k = 0; k < h; ++k) {
                        const int64_t p = d * h + k;
                        const double xz = (x.at(r, p) - fold.x_mean[static_cast<size_t>(p)]) *
                                          (1.0 / fold.x_std[static_cast<size_t>(p)]);
                        part += xz * fold.weights.at(p, j);
                    }
                    acc += part;
                }
                pred.at(r, j) = acc * fold.y_std[static_cast<size_t>(j)] + fold.y_mean[static_cast<size_t>(j)];
            }
        }
    }
    std::sort(scored_rows.begin(), scored_rows.end());
    Tensor pred_used = Tensor::zeros(static_cast<int64_t>(scored_rows.size()), y.cols());
    Tensor actual_used = Tensor::zeros(static_cast<int64_t>(scored_rows.size()), y.cols());
    for (size_t i = 0; i < scored_rows.size(); ++i)
        for (int64_t j = 0; j < y.cols(); ++j) {
            pred_used.at(static_cast<int64_t>(i), j) = pred.at(scored_rows[i], j);
            actual_used.at(static_cast<int64_t>(i), j) = y.at(scored_rows[i], j);
        }
    return pearson_per_voxel(pred_used, actual_used);
}

std::vector<double> EncodingModel::predict_row(const std::vector<double>& raw_row) const {
    const int64_t p_total = weights.rows();
    if (static_cast<int64_t>(raw_row.size()) != p_total) throw invalid_input("predict_row: width mismatch");
    const int64_t v = weights.cols();
    const int64_t h = hidden;
    std::vector<double> out(static_cast<size_t>(v), 0.0);
    for (int64_t j = 0; j < v; ++j) {
        double acc = 0.0;
        for (int d = 0; d < delay_depth; ++d) {
            double part = 0.0;
            for (int64_t k = 0; k < h; ++k) {
                const int64_t p = d * h + k;
                // (x - mu) * (1/sd): bit-identical to the attribution head
                // route, which multiplies by a reciprocal leaf.
                const double xz = (raw_row[static_cast<size_t>(p)] - x_mean[static_cast<size_t>(p)]) *
                                  (1.0 / x_std[static_cast<size_t>(p)]);
                part += xz * weights.at(p, j);
            }
            acc += part;
        }
        out[static_cast<size_t>(j)] = acc;
    }
    return out;
}

std::vector<double> EncodingModel::zscore_y(const std::vector<double>& raw_y) const {
    if (raw_y.size() != y_mean.size()) throw invalid_input("zscore_y: width mismatch");
    std::vector<double> out(raw_y.size());
    for (size_t j = 0; j < raw_y.size(); ++j) out[j] = (raw_y[j] - y_mean[j]) / y_std[j];
    return out;
}

double EncodingModel::tr_mse(const std::vector<double>& raw_row, const std::vector<double>& raw_y) const {
    const auto pred = predict_row(raw_row);
    const auto yz = zscore_y(raw_y);
    double acc = 0.0;
    for (size_t j = 0; j < pred.size(); ++j) {
        const double d = pred[j] - yz[j];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

std::vector<Tensor> decompose_weights(const EncodingModel& model) {
    if (model.weights.rows() != static_cast<int64_t>(model.delay_depth) * model.hidden)
        throw invalid_input("decompose: weight rows do not match delay depth * hidden");
    std::vector<Tensor> heads;
    const int64_t v = model.weights.cols();
    for (int d = 0; d < model.delay_depth; ++d) {
        Tensor g = Tensor::zeros(model.hidden, v);
        std::copy_n(model.weights.values.data() + static_cast<int64_t>(d) * model.hidden * v,
                    static_cast<int64_t>(model.hidden) * v, g.values.data());
        heads.push_back(std::move(g));
    }
    return heads;
}

SelectedLayers select_layers(const std::vector<double>& per_layer_score, int n_layers) {
    if (n_layers < 3) throw invalid_input("select_layers: need at least 3 layers");
    if (static_cast<int>(per_layer_score.size()) != n_layers)
        throw invalid_input("select_layers: need a score for every layer");
    int picks[3];
    for (int third = 0; third < 3; ++third) {
        const int begin = third * n_layers / 3;
        const int end = (third + 1) * n_layers / 3;
        int best = begin;
        for (int l = begin + 1; l < end; ++l)
            if (per_layer_score[static_cast<size_t>(l)] > per_layer_score[static_cast<size_t>(best)]) best = l;
        picks[third] = best;
    }
    return {picks[0], picks[1], picks[2]};
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 10; ++i) grid.push_back(std::pow(10.0, -3.0 + i));
    return grid;
}

void save_encoder(const EncodingModel& model, const std::string& path) {
    BinaryWriter w;
    w.str("BAEM");
    w.u32(1);
    w.u32(static_cast<uint32_t>(model.layer));
    w.u32(static_cast<uint32_t>(model.subject));
    w.u32(static_cast<uint32_t>(model.delay_depth));
    w.u32(static_cast<uint32_t>(model.hidden));
    w.u64(static_cast<uint64_t>(model.weights.rows()));
    w.u64(static_cast<uint64_t>(model.weights.cols()));
    w.f64(model.refit_lambda);
    w.f64_array(model.weights.values);
    w.f64_array(model.x_mean);
    w.f64_array(model.x_std);
    w.f64_array(model.y_mean);
    w.f64_array(model.y_std);
    w.u32(static_cast<uint32_t>(model.folds.size()));
    for (const auto& f : model.folds) {
        w.f64(f.lambda);
        w.u64(f.test_rows.size());
        for (int64_t r : f.test_rows) w.u64(static_cast<uint64_t>(r));
        w.f64_array(f.weights.values);
        w.f64_array(f.x_mean);
        w.f64_array(f.x_std);
        w.f64_array(f.y_mean);
        w.f64_array(f.y_std);
    }
    write_file_atomic(path, w.buffer());
}

EncodingModel load_encoder(const std::string& path) {
    BinaryReader r(read_file(path));
    if (r.str() != "BAEM") throw invalid_input("encoder file: bad magic in " + path);
    if (r.u32() != 1) throw invalid_input("encoder file: unsupported version");
    EncodingModel m;
    m.layer = static_cast<int>(r.u32());
    m.subject = static_cast<int>(r.u32());
    m.delay_depth = static_cast<int>(r.u32());
    m.hidden = static_cast<int>(r.u32());
    const uint64_t p = r.u64();
    const uint64_t v = r.u64();
    m.refit_lambda = r.f64();
    m.weights = Tensor({static_cast<int64_t>(p), static_cast<int64_t>(v)}, r.f64_array(p * v));
    m.x_mean = r.f64_array(p);
    m.x_std = r.f64_array(p);
    m.y_mean = r.f64_array(v);
    m.y_std = r.f64_array(v);
    const uint32_t n_folds = r.u32();
    for (uint32_t i = 0; i < n_folds; ++i) {
        EncodingModel::Fold f;
        f.lambda = r.f64();
        const uint64_t n_rows = r.u64();
        for (uint64_t k = 0; k < n_rows; ++k) f.test_rows.push_back(static_cast<int64_t>(r.u64()));
        f.weights = Tensor({static_cast<int64_t>(p), static_cast<int64_t>(v)}, r.f64_array(p * v));
        f.x_mean = r.f64_array(p);
        f.x_std = r.f64_array(p);
        f.y_mean = r.f64_array(v);
        f.y_std = r.f64_array(v);
        m.folds.push_back(std::move(f));
    }
    return m;
}

}  // namespace brainattr
