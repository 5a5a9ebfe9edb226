//! Macenko stain estimation on a synthetic two-stain image, then
//! normalization toward a different target profile.
//!
//! Writes `source.ppm` and `normalized.ppm` to the directory given as the
//! first argument (default: the system temp dir).

use rand::{Rng, SeedableRng};
use scda::stain::{angle_deg, synthesize_stain_image};
use scda::{estimate_stain_profile, normalize_to_target, MacenkoParams, StainProfile};

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn main() -> scda::Result<()> {
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let truth = StainProfile {
        stain_vectors: [unit([0.5626, 0.7201, 0.4062]), unit([0.2159, 0.8012, 0.5581])],
        max_concentrations: [1.6, 1.1],
    };
    let (w, h) = (128, 128);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut hf = vec![0.0; w * h];
    let mut ef = vec![0.0; w * h];
    for i in 0..w * h {
        match rng.random_range(0..10) {
            0 | 1 => {}
            2 => hf[i] = rng.random_range(0.4..1.6),
            3 => ef[i] = rng.random_range(0.4..1.1),
            _ => {
                hf[i] = rng.random_range(0.2..1.2);
                ef[i] = rng.random_range(0.2..0.9);
            }
        }
    }
    let params = MacenkoParams::default();
    let image = synthesize_stain_image(&truth, &hf, &ef, w, h, params.io_reference)?;
    let fit = estimate_stain_profile(&image, &params)?;
    for (k, name) in ["H", "E"].iter().enumerate() {
        println!(
            "{name}: recovered {:?}  error {:.2} deg  max conc {:.3}",
            fit.stain_vectors[k].map(|x| (x * 1e4).round() / 1e4),
            angle_deg(&fit.stain_vectors[k], &truth.stain_vectors[k]),
            fit.max_concentrations[k]
        );
    }

    let target = StainProfile {
        stain_vectors: [unit([0.65, 0.70, 0.29]), unit([0.07, 0.99, 0.11])],
        max_concentrations: [1.9, 1.0],
    };
    let normalized = normalize_to_target(&image, &fit, &target, &params)?;
    image.save_ppm(&out.join("source.ppm"))?;
    normalized.save_ppm(&out.join("normalized.ppm"))?;
    println!("wrote {}/source.ppm and normalized.ppm", out.display());
    Ok(())
}
