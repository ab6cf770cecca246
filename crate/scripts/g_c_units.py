"""Cross-check for g_c = sqrt(Gamma_rad * c / L_z) done entirely in SI units.

Gamma_rad is given as an energy (meV); it is turned into a rate with hbar,
combined with c / L_z as a rate, and the resulting coupling rate is turned
back into meV. The Rust implementation uses hbar*c in meV*um instead.
"""

HBAR_J_S = 1.054571817e-34
EV_J = 1.602176634e-19
C_M_S = 299792458.0


def g_c_mev(gamma_rad_mev: float, l_z_m: float) -> float:
    gamma_rate = gamma_rad_mev * 1e-3 * EV_J / HBAR_J_S  # 1/s
    g_rate = (gamma_rate * C_M_S / l_z_m) ** 0.5  # 1/s
    return g_rate * HBAR_J_S / EV_J * 1e3  # meV


if __name__ == "__main__":
    print(f"{g_c_mev(0.002, 1e-6):.13f}")
