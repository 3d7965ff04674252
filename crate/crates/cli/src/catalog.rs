//! Configurations shipped with the binary.

/// `(name, text)` in name order.
pub const BUNDLED: &[(&str, &str)] = &[
    ("constant_hv", include_str!("../configs/constant_hv.cfg")),
    ("density_fig1", include_str!("../configs/density_fig1.cfg")),
    ("fig1", include_str!("../configs/fig1.cfg")),
    ("fig2", include_str!("../configs/fig2.cfg")),
    ("fig3", include_str!("../configs/fig3.cfg")),
    ("fig4", include_str!("../configs/fig4.cfg")),
    ("fig5", include_str!("../configs/fig5.cfg")),
    ("fig6", include_str!("../configs/fig6.cfg")),
    ("martingale_fig1", include_str!("../configs/martingale_fig1.cfg")),
    ("martingale_fig5", include_str!("../configs/martingale_fig5.cfg")),
    ("martingale_fig6", include_str!("../configs/martingale_fig6.cfg")),
    ("martingale_priced", include_str!("../configs/martingale_priced.cfg")),
    ("measure_change", include_str!("../configs/measure_change.cfg")),
    ("moments_fig3", include_str!("../configs/moments_fig3.cfg")),
    ("price_call", include_str!("../configs/price_call.cfg")),
    ("simulate_fig5", include_str!("../configs/simulate_fig5.cfg")),
];

pub fn is_figure(name: &str) -> bool {
    name.len() == 4 && name.starts_with("fig") && name.as_bytes()[3].is_ascii_digit()
}

/// Looks up a bundled configuration by name, with or without `.cfg`.
pub fn bundled(name: &str) -> Option<&'static str> {
    let key = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == key).map(|(_, text)| *text)
}
