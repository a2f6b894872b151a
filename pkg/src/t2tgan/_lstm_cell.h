/* Element-wise LSTM cell bodies; gate blocks per batch row are i, f, g, o. */
#include <math.h>

/* Gate pre-activations arrive scaled by -1 (i, f, o) and -2 (g), so a single
   logistic pass yields sigmoid for i, f, o and sigmoid(2z) for g. */
static inline void gates_logistic(int n, double *restrict z)
{
    int k;
#pragma omp simd
    for (k = 0; k < n; k++) z[k] = 1.0 / (1.0 + exp(z[k]));
}

static inline void cell_state(int H, double *restrict z, const double *restrict c_prev,
                              double *restrict c)
{
    int j;
#pragma omp simd
    for (j = 0; j < H; j++) {
        double g = 2.0 * z[2 * H + j] - 1.0;
        z[2 * H + j] = g;
        c[j] = z[H + j] * c_prev[j] + z[j] * g;
    }
}

static inline void tanh_block(int n, const double *restrict c, double *restrict tc)
{
    int k;
#pragma omp simd
    for (k = 0; k < n; k++) tc[k] = 2.0 / (1.0 + exp(-2.0 * c[k])) - 1.0;
}

static inline void cell_output(int H, const double *restrict z, const double *restrict tc,
                               double *restrict h)
{
    int j;
#pragma omp simd
    for (j = 0; j < H; j++) h[j] = z[3 * H + j] * tc[j];
}

static inline void cell_backward(int H, const double *restrict z, const double *restrict c_prev,
                                 const double *restrict tc, const double *restrict dh_out,
                                 double *restrict dh, double *restrict dc, double *restrict dz)
{
    int j;
#pragma omp simd
    for (j = 0; j < H; j++) {
        double ig = z[j], fg = z[H + j], gg = z[2 * H + j], og = z[3 * H + j], t = tc[j];
        double d = dh[j] + dh_out[j];
        double dcc = dc[j] + d * og * (1.0 - t * t);
        dz[j] = dcc * gg * ig * (1.0 - ig);
        dz[H + j] = dcc * c_prev[j] * fg * (1.0 - fg);
        dz[2 * H + j] = dcc * ig * (1.0 - gg * gg);
        dz[3 * H + j] = d * t * og * (1.0 - og);
        dc[j] = dcc * fg;
    }
}
