//! Unit conversions applied at the I/O boundary. Internal units are Hz, meV,
//! ps and mW.

/// `E[meV] * λ[nm]`
pub const HC_MEV_NM: f64 = 1.239_841_93e6;

pub fn nm_to_mev(lambda_nm: f64) -> f64 {
    HC_MEV_NM / lambda_nm
}

pub fn mev_to_nm(energy_mev: f64) -> f64 {
    HC_MEV_NM / energy_mev
}

pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

pub fn mw_to_dbm(p_mw: f64) -> f64 {
    10.0 * p_mw.log10()
}

pub const PS_PER_S: f64 = 1e12;

pub fn s_to_ps(t: f64) -> f64 {
    t * PS_PER_S
}

pub fn ps_to_s(t: f64) -> f64 {
    t / PS_PER_S
}
