use hybrid_field::data::{psnr, ssim, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Window-by-window SSIM with an explicit 2-D Gaussian kernel.
fn ssim_reference(a: &Image, b: &Image) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5;
    let mut k = [[0.0f64; WIN]; WIN];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    let luma = |img: &Image, x: usize, y: usize| {
        let p = img.pixel(x, y);
        0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64
    };
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height - WIN {
        for x0 in 0..=a.width - WIN {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..WIN {
                for i in 0..WIN {
                    let w = k[j][i] / sum;
                    let (p, q) = (luma(a, x0 + i, y0 + j), luma(b, x0 + i, y0 + j));
                    mx += w * p;
                    my += w * q;
                    sxx += w * p * p;
                    syy += w * q * q;
                    sxy += w * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn noisy(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let base = ((x + y) as f32 / (w + h) as f32).min(1.0);
            img.set_pixel(x, y, [base, rng.gen(), 1.0 - base]);
        }
    }
    img
}

#[test]
fn ssim_matches_direct_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (w, h) in [(11, 11), (17, 23), (32, 20)] {
        let a = noisy(w, h, &mut rng);
        let b = noisy(w, h, &mut rng);
        let (got, expect) = (ssim(&a, &b).unwrap(), ssim_reference(&a, &b));
        assert!((got - expect).abs() < 1e-10, "{w}x{h}: {got} vs {expect}");
    }
}

#[test]
fn ssim_penalizes_noise_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = noisy(24, 24, &mut rng);
    let mut prev = 1.0 + 1e-12;
    for amp in [0.0f32, 0.05, 0.1, 0.2] {
        let mut b = a.clone();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        b.data.iter_mut().for_each(|v| *v = (*v + amp * (r.gen::<f32>() - 0.5)).clamp(0.0, 1.0));
        let s = ssim(&a, &b).unwrap();
        assert!(s <= prev, "amp {amp}: {s} > {prev}");
        prev = s;
    }
}

#[test]
fn psnr_of_uniform_offset() {
    let a = Image::filled(8, 8, [0.5; 3]);
    let b = Image::filled(8, 8, [0.6; 3]);
    // mse = 0.01 (up to f32 rounding of the pixel values)
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
}
