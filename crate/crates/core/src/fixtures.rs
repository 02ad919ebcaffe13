//! Published tables bundled with the crate.

pub const TABLE_A1_LABELS: &str = include_str!("../fixtures/table_a1_labels.csv");
pub const TABLE1_CRITERIA: &str = include_str!("../fixtures/table1_criteria.json");
pub const DISTRIBUTION_SCORES: &str = include_str!("../fixtures/fig26_distribution.csv");
pub const DILUTION_SCORES: &str = include_str!("../fixtures/fig27_dilution.csv");
pub const REINFORCEMENT_SCORES: &str = include_str!("../fixtures/fig28_reinforcement.csv");
