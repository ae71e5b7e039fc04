/* Fused elementwise passes of the GRU recurrence.  restrict lets gcc
   vectorize the loops.  Gates are written with exp rather than tanh: the
   vector exp in glibc's libmvec is fast, while its vector tanh falls back to
   scalar calls.  Results differ from the tanh forms only by rounding. */
#ifndef PLATOON_VDN_GRU_OPS_H
#define PLATOON_VDN_GRU_OPS_H

#include <math.h>

/* one clone per ISA level, picked at load time, so wider vector tanh is
   used where the CPU has it without building for a specific machine */
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define GRU_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define GRU_CLONES
#endif

static inline double gru_sig(double x) { return 1.0 / (1.0 + exp(-x)); }
static inline double gru_tanh(double x) { return 2.0 / (1.0 + exp(-2.0 * x)) - 1.0; }

/* z = sig(fz + zr[:, :H]), r = sig(fr + zr[:, H:]), rh = r * h */
GRU_CLONES static void gru_gates(int n_b, int hid, const double *restrict fz,
                             const double *restrict fr, const double *restrict zr,
                             const double *restrict h, double *restrict z,
                             double *restrict r, double *restrict rh)
{
    for (int b = 0; b < n_b; b++) {
        const double *restrict q = zr + (long)b * 2 * hid;
        long off = (long)b * hid;
        for (int j = 0; j < hid; j++) {
            double zv = gru_sig(fz[off + j] + q[j]);
            double rv = gru_sig(fr[off + j] + q[hid + j]);
            z[off + j] = zv;
            r[off + j] = rv;
            rh[off + j] = rv * h[off + j];
        }
    }
}

/* c = tanh(fc + u), h_next = h + z * (c - h) */
GRU_CLONES static void gru_update(long n, const double *restrict fc, const double *restrict u,
                              const double *restrict h, const double *restrict z,
                              double *restrict c, double *restrict h_next)
{
    for (long j = 0; j < n; j++) {
        double cv = gru_tanh(fc[j] + u[j]);
        c[j] = cv;
        h_next[j] = h[j] + z[j] * (cv - h[j]);
    }
}

/* dh += dh_in; dc = dh z (1 - c^2); dz = dh (c - h) z (1 - z) */
GRU_CLONES static void gru_back_update(long n, double *restrict dh, const double *restrict dh_in,
                                   const double *restrict z, const double *restrict c,
                                   const double *restrict h, double *restrict dc,
                                   double *restrict dz)
{
    for (long j = 0; j < n; j++) {
        double g = dh[j] + dh_in[j];
        double zv = z[j], cv = c[j];
        dh[j] = g;
        dc[j] = g * zv * (1.0 - cv * cv);
        dz[j] = g * (cv - h[j]) * zv * (1.0 - zv);
    }
}

/* dr = drh h r (1 - r); dh = dh (1 - z) + drh r; packs [dz | dr] rows into dzr */
GRU_CLONES static void gru_back_gates(int n_b, int hid, const double *restrict drh,
                                  const double *restrict h, const double *restrict r,
                                  const double *restrict z, const double *restrict dz,
                                  double *restrict dh, double *restrict dr,
                                  double *restrict dzr)
{
    for (int b = 0; b < n_b; b++) {
        long off = (long)b * hid;
        double *restrict q = dzr + (long)b * 2 * hid;
        for (int j = 0; j < hid; j++) {
            double rv = r[off + j];
            double d = drh[off + j] * h[off + j] * rv * (1.0 - rv);
            dr[off + j] = d;
            dh[off + j] = dh[off + j] * (1.0 - z[off + j]) + drh[off + j] * rv;
            q[j] = dz[off + j];
            q[hid + j] = d;
        }
    }
}

#endif
