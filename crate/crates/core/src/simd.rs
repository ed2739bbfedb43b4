//! `f32` dot products using AVX2 and FMA when the running CPU has them.

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn dot(a: &[f32], b: &[f32]) -> f32 {
        let n = a.len().min(b.len());
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        let mut acc = [_mm256_setzero_ps(); 4];
        let mut i = 0;
        while i + 32 <= n {
            for (k, s) in acc.iter_mut().enumerate() {
                let off = i + 8 * k;
                *s = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(off)), _mm256_loadu_ps(pb.add(off)), *s);
            }
            i += 32;
        }
        while i + 8 <= n {
            acc[0] = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(i)), _mm256_loadu_ps(pb.add(i)), acc[0]);
            i += 8;
        }
        let s = _mm256_add_ps(_mm256_add_ps(acc[0], acc[1]), _mm256_add_ps(acc[2], acc[3]));
        let lo = _mm256_castps256_ps128(s);
        let hi = _mm256_extractf128_ps(s, 1);
        let q = _mm_add_ps(lo, hi);
        let q = _mm_add_ps(q, _mm_movehl_ps(q, q));
        let q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
        let mut total = _mm_cvtss_f32(q);
        while i < n {
            total += a[i] * b[i];
            i += 1;
        }
        total
    }

    /// Sum of the eight lanes of each accumulator, as one vector.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn reduce8(a: &[__m256; 8]) -> __m256 {
        let h01 = _mm256_hadd_ps(a[0], a[1]);
        let h23 = _mm256_hadd_ps(a[2], a[3]);
        let h45 = _mm256_hadd_ps(a[4], a[5]);
        let h67 = _mm256_hadd_ps(a[6], a[7]);
        let q0 = _mm256_hadd_ps(h01, h23);
        let q1 = _mm256_hadd_ps(h45, h67);
        _mm256_add_ps(_mm256_permute2f128_ps(q0, q1, 0x20), _mm256_permute2f128_ps(q0, q1, 0x31))
    }

    /// `out[r] = w[r·cols..(r+1)·cols] · x`, eight rows at a time.
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn gemv(w: &[f32], cols: usize, x: &[f32], out: &mut [f32]) {
        let rows = out.len();
        let body = cols - cols % 8;
        let (pw, px) = (w.as_ptr(), x.as_ptr());
        let mut r = 0;
        while r + 8 <= rows {
            let mut acc = [_mm256_setzero_ps(); 8];
            let mut c = 0;
            while c < body {
                let xv = _mm256_loadu_ps(px.add(c));
                for (k, s) in acc.iter_mut().enumerate() {
                    *s = _mm256_fmadd_ps(_mm256_loadu_ps(pw.add((r + k) * cols + c)), xv, *s);
                }
                c += 8;
            }
            _mm256_storeu_ps(out.as_mut_ptr().add(r), reduce8(&acc));
            if body < cols {
                for (k, o) in out[r..r + 8].iter_mut().enumerate() {
                    let row = &w[(r + k) * cols..(r + k + 1) * cols];
                    for j in body..cols {
                        *o += row[j] * x[j];
                    }
                }
            }
            r += 8;
        }
        for (k, o) in out[r..].iter_mut().enumerate() {
            *o = dot(&w[(r + k) * cols..(r + k + 1) * cols], x);
        }
    }
}

#[inline]
fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Returns `false` when no accelerated path applies.
#[inline]
pub(crate) fn gemv_f32(w: &[f32], cols: usize, x: &[f32], out: &mut [f32]) -> bool {
    assert!(w.len() >= out.len() * cols && x.len() >= cols);
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: features detected; bounds asserted above.
            unsafe { x86::gemv(w, cols, x, out) };
            return true;
        }
    }
    false
}

#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> Option<f32> {
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: the required CPU features were detected above.
            return Some(unsafe { x86::dot(a, b) });
        }
    }
    let _ = (a, b);
    None
}
