#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "hft/common.hpp"
#include "hft/tensor.hpp"

int main(int argc, char** argv) {
    hft::nn::set_finite_checks(true);
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
