use renormflow::renorm::{continuum_green_d1, continuum_expected_psi_sq_d1};

fn main() {
    // sanity: σ = 2... not allowed (contour needs σ<2); check against the
    // known σ→ formula? use lattice cross-check instead later.
    // sigma = 0.4 deep-kappa slope
    let sigma = 0.4f64;
    let mut prev: Option<f64> = None;
    for j in 2..=14 {
        let kappa = 0.5f64.powi(j);
        let e = continuum_expected_psi_sq_d1(sigma, kappa, 0.5).unwrap();
        let slope = prev.map(|p: f64| ((e/p) as f64).ln() / (0.5f64.powf(1.0/sigma)).ln());
        println!("kappa=2^-{j}: E={e:.6e} local slope {:?}", slope.map(|s|(s*1e4).round()/1e4));
        prev = Some(e);
    }
    // G(x) sanity: integrability & positivity at sample points
    for x in [0.01, 0.1, 1.0, 3.0] {
        println!("G({x}) = {:.6e}", continuum_green_d1(sigma, x).unwrap());
    }
}
