// Reference implementation of the external-likelihood line protocol:
// reads one whitespace-separated point per line on stdin and answers with
// one log-likelihood per line on stdout, flushing after every reply.
//
// The model is a spherical Gaussian, logL = -|x|^2 / (2 sigma^2), with sigma
// taken from argv[1] (default 0.5).  Pair it with a problem file whose prior
// is a uniform box, e.g.:
//
//   format = nestkit-problem v1
//   [problem]
//   name = demo-gaussian
//   likelihood = ./demo-external-likelihood 0.5
//   [prior]
//   x = uniform -1 1
//   y = uniform -1 1

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

int main(int argc, char** argv) {
    double sigma = 0.5;
    if (argc > 1) {
        sigma = std::strtod(argv[1], nullptr);
        if (!(sigma > 0.0)) {
            std::fprintf(stderr, "usage: %s [sigma>0]\n", argv[0]);
            return 2;
        }
    }
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    std::string line;
    char buf[1 << 12];
    while (std::fgets(buf, sizeof buf, stdin)) {
        std::istringstream in(buf);
        double x, ss = 0.0;
        bool any = false;
        while (in >> x) {
            ss += x * x;
            any = true;
        }
        if (!any) continue;  // blank line: ignore rather than desync
        std::printf("%.17g\n", -ss * inv2s2);
        std::fflush(stdout);
    }
    return 0;
}
