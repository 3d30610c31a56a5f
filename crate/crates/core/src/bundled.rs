//! Sample scenarios shipped with the crate.

use crate::scenario::Scenario;

pub const BUNDLED: [(&str, &str); 4] = [
    ("turkey_equity", include_str!("../scenarios/turkey_equity.json")),
    ("failed_refund", include_str!("../scenarios/failed_refund.json")),
    ("secondary_market", include_str!("../scenarios/secondary_market.json")),
    ("compliance_mixed", include_str!("../scenarios/compliance_mixed.json")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios are well formed"))
}

pub fn all() -> Vec<Scenario> {
    BUNDLED
        .iter()
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios are well formed"))
        .collect()
}
