// Minimal tour of the tape: differentiate a tiny expression and fit a line.

#include <cstdio>

#include "mmsarc/ops.hpp"
#include "mmsarc/optim.hpp"

using namespace mmsarc;

int main() {
    // d/dx [tanh(x)^2] at x = 0.4
    Tensor x = Tensor::scalar(0.4, true);
    Tensor y = mul(tanh(x), tanh(x));
    backward(y);
    std::printf("d/dx tanh(x)^2 at 0.4 = %.6f\n", x.grad()[0]);
    Graph::active().clear();

    // fit y = 2x - 1 by gradient descent on squared error
    Rng rng(1);
    Tensor w = Tensor::scalar(0.0, true);
    Tensor b = Tensor::scalar(0.0, true);
    AdamGroups opt({{"all", {w, b}, 0.05, 0.0}});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int it = 0; it < 400; ++it) {
        Graph::active().clear();
        opt.zero_grad();
        const double xv = u(rng), target = 2.0 * xv - 1.0;
        Tensor pred = add(affine(w, xv, 0.0), b);
        Tensor err = affine(pred, 1.0, -target);
        backward(mul(err, err));
        opt.step();
    }
    Graph::active().clear();
    std::printf("fitted w = %.3f (want 2), b = %.3f (want -1)\n", w.value(), b.value());
    return 0;
}
