//! One-group 1-D discrete-ordinates (Sn) k-eigenvalue solver on a slab.
//!
//! Textbook diamond-difference spatial scheme with Gauss–Legendre angular
//! quadrature on mu in (-1, 1), vacuum boundaries at both ends, isotropic
//! scattering and fission. Deliberately shares no transport machinery with
//! the main solver: a completely different discretization of the same
//! physics, used to validate eigenvalues on slab problems that are
//! one-dimensional by symmetry.

/// Homogeneous slab region: thickness and one-group cross sections.
#[derive(Debug, Clone, Copy)]
pub struct SlabRegion {
    pub width: f64,
    pub sigma_t: f64,
    pub sigma_s: f64,
    pub nu_sigma_f: f64,
}

/// Solves the k-eigenvalue problem on a stack of slab regions with vacuum
/// boundaries on both faces. `cells_per_region` controls the spatial mesh,
/// `n_mu` the number of Gauss–Legendre angles per half-range. Returns
/// (k_eff, cell-average scalar flux).
pub fn sn_slab_k(
    regions: &[SlabRegion],
    cells_per_region: usize,
    n_mu: usize,
    tol_k: f64,
    max_outer: usize,
) -> (f64, Vec<f64>) {
    assert!(!regions.is_empty() && cells_per_region > 0 && n_mu > 0);

    // Flatten the region stack into a uniform-per-region cell mesh.
    let mut h = Vec::new();
    let mut st = Vec::new();
    let mut ss = Vec::new();
    let mut nf = Vec::new();
    for r in regions {
        for _ in 0..cells_per_region {
            h.push(r.width / cells_per_region as f64);
            st.push(r.sigma_t);
            ss.push(r.sigma_s);
            nf.push(r.nu_sigma_f);
        }
    }
    let n = h.len();

    // Gauss-Legendre nodes on (0, 1), mirrored to (-1, 1). Weights over the
    // full range sum to 2.
    let (mu_half, w_half) = gauss_legendre_01(n_mu);

    let mut phi = vec![1.0; n];
    let mut k = 1.0f64;
    let mut fission: Vec<f64> = (0..n).map(|i| nf[i] * phi[i]).collect();

    for _outer in 0..max_outer {
        // Converge the scattering source for this fission source.
        for _inner in 0..400 {
            let mut phi_new = vec![0.0; n];
            // Angular source is isotropic: q(mu) = (ss*phi + F/k) / 2.
            let q: Vec<f64> =
                (0..n).map(|i| 0.5 * (ss[i] * phi[i] + fission[i] / k)).collect();
            for m in 0..n_mu {
                let mu = 0.5 + 0.5 * mu_half[m]; // map (-1,1) node into (0,1)
                let w = 0.5 * w_half[m]; // jacobian of the same map
                // mu > 0: sweep left to right from vacuum.
                let mut psi_in = 0.0;
                for i in 0..n {
                    let a = mu / h[i];
                    let psi_out = ((a - 0.5 * st[i]) * psi_in + q[i]) / (a + 0.5 * st[i]);
                    phi_new[i] += w * 0.5 * (psi_in + psi_out);
                    psi_in = psi_out;
                }
                // mu < 0: sweep right to left from vacuum (mirror symmetry
                // of the quadrature lets us reuse |mu| and w).
                let mut psi_in = 0.0;
                for i in (0..n).rev() {
                    let a = mu / h[i];
                    let psi_out = ((a - 0.5 * st[i]) * psi_in + q[i]) / (a + 0.5 * st[i]);
                    phi_new[i] += w * 0.5 * (psi_in + psi_out);
                    psi_in = psi_out;
                }
            }
            let delta = phi_new
                .iter()
                .zip(&phi)
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-30))
                .fold(0.0f64, f64::max);
            phi = phi_new;
            if delta < 1e-10 {
                break;
            }
        }

        let fission_new: Vec<f64> = (0..n).map(|i| nf[i] * phi[i]).collect();
        let num: f64 = fission_new.iter().zip(&h).map(|(f, hh)| f * hh).sum();
        let den: f64 = fission.iter().zip(&h).map(|(f, hh)| f * hh).sum();
        let k_new = k * num / den;
        let dk = (k_new - k).abs();
        fission = fission_new;
        k = k_new;
        if dk < tol_k {
            break;
        }
    }
    (k, phi)
}

/// Gauss-Legendre nodes and weights on (-1, 1) for `n` points; weights sum
/// to 2. Self-contained so the oracle stays independent of the solver's
/// quadrature code.
fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// (P_n(x), P_n'(x)) via the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
