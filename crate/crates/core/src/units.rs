//! Unit system shared by every module.
//!
//! Lengths are in Å, times in fs, energies in kcal/mol, temperatures in K and
//! masses in amu. Momenta therefore carry amu·Å/fs, and kinetic energies come
//! out in amu·Å²/fs² before conversion.

/// Boltzmann constant in kcal/(mol·K).
pub const BOLTZMANN: f64 = 0.0019872041;

/// 1 amu·Å²/fs² expressed in kcal/mol.
pub const AMU_A2_FS2_TO_KCAL_MOL: f64 = 2390.057361376673;

/// Speed of light in cm/fs.
pub const SPEED_OF_LIGHT_CM_PER_FS: f64 = 2.99792458e-5;

/// 1 Å²/fs in m²/s.
pub const A2_PER_FS_TO_M2_PER_S: f64 = 1.0e-5;

pub const FS_PER_PS: f64 = 1000.0;

/// Thermal energy k_B·T in kcal/mol.
pub fn kt(temperature: f64) -> f64 {
    BOLTZMANN * temperature
}

/// Converts a wavenumber in cm⁻¹ to an angular frequency in fs⁻¹.
pub fn wavenumber_to_angular_frequency(wavenumber: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_FS * wavenumber
}

/// Acceleration (Å/fs²) of a mass `mass` amu under a force in kcal/(mol·Å).
#[inline]
pub fn force_to_acceleration(force: f64, mass: f64) -> f64 {
    force / (mass * AMU_A2_FS2_TO_KCAL_MOL)
}

/// Standard atomic weights for the element symbols used by the bundled systems.
pub fn atomic_mass(symbol: &str) -> Option<f64> {
    let m = match symbol {
        "H" => 1.008,
        "C" => 12.011,
        "N" => 14.007,
        "O" => 15.999,
        "Ne" => 20.180,
        "Ar" => 39.948,
        "X" => 1.0,
        _ => return None,
    };
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy_conversion_matches_codata() {
        // 1 amu * (1 Å/fs)^2 = 1.66053906660e-27 kg * 1e10 m^2/s^2, per mole, in kcal.
        let joule_per_mol = 1.66053906660e-27 * 1.0e10 * 6.02214076e23;
        let kcal_per_mol = joule_per_mol / 4184.0;
        assert!((kcal_per_mol - AMU_A2_FS2_TO_KCAL_MOL).abs() < 1e-6);
    }

    #[test]
    fn thermostat_frequency_conversion() {
        // 2000 cm^-1 is a period of about 16.7 fs
        let w = wavenumber_to_angular_frequency(2000.0);
        let period = 2.0 * std::f64::consts::PI / w;
        assert!((period - 16.678).abs() < 1e-2, "period {period}");
    }
}
