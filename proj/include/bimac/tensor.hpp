#ifndef BIMAC_TENSOR_HPP
#define BIMAC_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bimac {

// Error taxonomy. The CLI maps these onto process exit codes.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IndexError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };
struct StateError : std::runtime_error { using std::runtime_error::runtime_error; };
struct MetricError : NumericError { using NumericError::NumericError; };

// Multiply/add tally for one submodule. Counts are doubles so analytic
// reports may carry fractional pixel counts; instrumented tallies stay
// integral. Convention: every accumulation chain counts one add per
// accumulated term (a bias-seeded convolution therefore has add == mul).
struct OpCount {
    double mul = 0.0;
    double add = 0.0;
    OpCount& operator+=(const OpCount& o) { mul += o.mul; add += o.add; return *this; }
    double flops() const { return mul + add; }
};

// Dense row-major tensor of doubles.
// Axis conventions used throughout: feature maps (C,H,W), convolution
// kernels (C_out,C_in,k_h,k_w), vectors (D).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0)
        : shape(std::move(shape_)) {
        data.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return s.empty() ? 0 : n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t axis) const { return shape.at(axis); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool empty() const { return data.empty(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // rank-specific indexers; bounds are the caller's responsibility
    double& at3(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    double at3(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    double& at4(std::size_t o, std::size_t c, std::size_t u, std::size_t v) {
        return data[((o * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }
    double at4(std::size_t o, std::size_t c, std::size_t u, std::size_t v) const {
        return data[((o * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }
    double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::vector<std::size_t> shape;
    std::vector<double> data;
};

std::string shape_str(const Tensor& t);

// Throws NumericError if any entry is non-finite. `what` names the producer.
void require_finite(const Tensor& t, const char* what);

// Same-size 2-D convolution, stride 1, zero padding.
//   x (C_in,H,W), w (C_out,C_in,k,k), b (C_out); k odd, pad == (k-1)/2.
// Accumulation order is fixed (bias, then row-major over c,u,v) so results
// are bit-reproducible.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad,
              OpCount* tally = nullptr);

struct Position {
    int i = 0;
    int j = 0;
    bool operator<(const Position& o) const { return i != o.i ? i < o.i : j < o.j; }
    bool operator==(const Position& o) const { return i == o.i && j == o.j; }
};

// Evaluates conv2d only at the listed output positions, writing the C_out
// vector for position p into out[:, p.i, p.j]. Neighborhood reads always
// cover all of x; the position list selects outputs, never inputs.
void conv2d_at_into(const Tensor& x, const Tensor& w, const Tensor& b, int pad,
                    const std::vector<Position>& positions, Tensor& out,
                    OpCount* tally = nullptr);

// Map-building wrapper over conv2d_at_into.
std::vector<std::pair<Position, Tensor>> conv2d_at(const Tensor& x, const Tensor& w,
                                                   const Tensor& b, int pad,
                                                   const std::vector<Position>& positions,
                                                   OpCount* tally = nullptr);

// Per-channel mean of x over pixels with keep == 1. keep is (1,H,W) binary.
// An all-zero keep falls back to the mean over every pixel.
Tensor masked_gap(const Tensor& x, const Tensor& keep, OpCount* tally = nullptr);

// v (D_in), w (D_out,D_in), b (D_out) -> w.v + b
Tensor linear(const Tensor& v, const Tensor& w, const Tensor& b, OpCount* tally = nullptr);

double sigmoid_scalar(double t);
Tensor sigmoid(const Tensor& t);
Tensor relu(const Tensor& t);

} // namespace bimac

#endif
