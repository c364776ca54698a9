//! The French MTPL frequency portfolio: its schema and a stand-in generator.
//!
//! [`fremtpl2freq_schema`] maps the public `freMTPL2freq` file (headers
//! `ClaimNb, Exposure, Area, VehPower, ...`) onto the column names used
//! throughout the crate. [`surrogate_portfolio`] produces a table with the
//! same schema when the real file is not at hand. Its categorical columns
//! reproduce the published level counts of the real portfolio exactly (at
//! full size); its numeric columns follow parametric shapes matched to the
//! published quartiles and means, with driver age driving the bonus-malus
//! level and area banding log-density as in the real data. Nothing in it is
//! tuned to claim frequencies.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Gamma, Poisson};

use crate::rng::{derive_named, rng_from_seed, Rng};
use crate::tabular::{Column, ColumnRole, ColumnSpec, Dataset, Schema};

pub const CLAIM_NB: &str = "ClaimNb";
pub const EXPOSURE: &str = "Exposure";
pub const AREA: &str = "AREA";
pub const VEHICLE_POWER: &str = "VEHICLE_POWER";
pub const VEHICLE_AGE: &str = "VEHICLE_AGE";
pub const DRIVER_AGE: &str = "DRIVER_AGE";
pub const BONUS_MALUS: &str = "BONUS_MALUS";
pub const VEHICLE_BRAND: &str = "VEHICLE_BRAND";
pub const VEHICLE_GAS: &str = "VEHICLE_GAS";
pub const DENSITY: &str = "DENSITY";
pub const REGION: &str = "REGION";

/// Row count of the full portfolio.
pub const FULL_ROWS: usize = 678_013;

const AREA_COUNTS: [(&str, u64); 6] = [
    ("A", 103_957),
    ("B", 75_459),
    ("C", 191_880),
    ("D", 151_596),
    ("E", 137_167),
    ("F", 17_954),
];

const POWER_COUNTS: [(&str, u64); 12] = [
    ("4", 115_349),
    ("5", 124_821),
    ("6", 148_976),
    ("7", 145_401),
    ("8", 46_956),
    ("9", 30_085),
    ("10", 31_354),
    ("11", 18_352),
    ("12", 8_214),
    ("13", 3_229),
    ("14", 2_350),
    ("15", 2_926),
];

const BRAND_COUNTS: [(&str, u64); 11] = [
    ("B1", 162_736),
    ("B2", 159_861),
    ("B3", 53_395),
    ("B4", 25_179),
    ("B5", 34_753),
    ("B6", 28_548),
    ("B10", 17_707),
    ("B11", 13_585),
    ("B12", 166_024),
    ("B13", 12_178),
    ("B14", 4_047),
];

const GAS_COUNTS: [(&str, u64); 2] = [("Diesel", 332_136), ("Regular", 345_877)];

const REGION_COUNTS: [(&str, u64); 22] = [
    ("R11", 69_791),
    ("R21", 3_026),
    ("R22", 7_994),
    ("R23", 8_784),
    ("R24", 160_601),
    ("R25", 10_893),
    ("R26", 10_492),
    ("R31", 27_285),
    ("R41", 12_990),
    ("R42", 2_200),
    ("R43", 1_326),
    ("R52", 38_751),
    ("R53", 42_122),
    ("R54", 19_046),
    ("R72", 31_329),
    ("R73", 17_141),
    ("R74", 4_567),
    ("R82", 84_752),
    ("R83", 5_287),
    ("R91", 35_805),
    ("R93", 79_315),
    ("R94", 4_516),
];

/// Density band (inhabitants per km²) of each area code, log-uniform inside.
const AREA_DENSITY_BANDS: [(f64, f64); 6] = [
    (1.0, 50.0),
    (50.0, 100.0),
    (100.0, 500.0),
    (500.0, 2_000.0),
    (2_000.0, 10_000.0),
    (10_000.0, 27_000.0),
];

fn labels<'a>(counts: &[(&'a str, u64)]) -> Vec<&'a str> {
    counts.iter().map(|(l, _)| *l).collect()
}

/// Schema of `freMTPL2freq`; `IDpol` is not part of it and is ignored on load.
pub fn fremtpl2freq_schema() -> Schema {
    Schema::new(vec![
        ColumnSpec::numeric(CLAIM_NB).with_role(ColumnRole::Response),
        ColumnSpec::numeric(EXPOSURE).with_role(ColumnRole::Exposure),
        ColumnSpec::categorical(AREA, &labels(&AREA_COUNTS)).with_source("Area"),
        ColumnSpec::categorical(VEHICLE_POWER, &labels(&POWER_COUNTS)).with_source("VehPower"),
        ColumnSpec::numeric(VEHICLE_AGE).with_source("VehAge"),
        ColumnSpec::numeric(DRIVER_AGE).with_source("DrivAge"),
        ColumnSpec::numeric(BONUS_MALUS).with_source("BonusMalus"),
        ColumnSpec::categorical(VEHICLE_BRAND, &labels(&BRAND_COUNTS)).with_source("VehBrand"),
        ColumnSpec::categorical(VEHICLE_GAS, &labels(&GAS_COUNTS)).with_source("VehGas"),
        ColumnSpec::numeric(DENSITY).with_source("Density"),
        ColumnSpec::categorical(REGION, &labels(&REGION_COUNTS)).with_source("Region"),
    ])
    .expect("built-in schema is valid")
}

/// Level codes whose counts are the published counts scaled to `n`
/// (largest-remainder rounding), in random order.
fn exact_marginal(counts: &[u64], n: usize, rng: &mut Rng) -> Vec<u32> {
    let total: u64 = counts.iter().sum();
    let mut alloc: Vec<(usize, u64, f64)> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let exact = c as f64 * n as f64 / total as f64;
            (k, exact.floor() as u64, exact - exact.floor())
        })
        .collect();
    let assigned: u64 = alloc.iter().map(|a| a.1).sum();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(n - assigned as usize) {
        alloc[k].1 += 1;
    }
    let mut codes: Vec<u32> = alloc
        .iter()
        .flat_map(|&(k, c, _)| std::iter::repeat_n(k as u32, c as usize))
        .collect();
    codes.shuffle(rng);
    codes
}

fn counts_of(t: &[(&str, u64)]) -> Vec<u64> {
    t.iter().map(|(_, c)| *c).collect()
}

/// A portfolio of `n` policies with the `freMTPL2freq` schema.
pub fn surrogate_portfolio(n: usize, seed: u64) -> Dataset {
    let schema = Arc::new(fremtpl2freq_schema());
    let mut rng = rng_from_seed(derive_named(seed, "surrogate-portfolio"));

    let area = exact_marginal(&counts_of(&AREA_COUNTS), n, &mut rng);
    let power = exact_marginal(&counts_of(&POWER_COUNTS), n, &mut rng);
    let brand = exact_marginal(&counts_of(&BRAND_COUNTS), n, &mut rng);
    let gas = exact_marginal(&counts_of(&GAS_COUNTS), n, &mut rng);
    let region = exact_marginal(&counts_of(&REGION_COUNTS), n, &mut rng);

    let veh_age_dist = Gamma::<f64>::new(1.6, 4.7).expect("valid gamma");
    let drv_age_dist = Gamma::<f64>::new(3.0, 9.2).expect("valid gamma");
    let licence_lag = Exp::new(1.0 / 5.0).expect("valid exponential");
    let malus_steps = Poisson::new(0.4).expect("valid poisson");

    let mut veh_age = Vec::with_capacity(n);
    let mut drv_age = Vec::with_capacity(n);
    let mut bonus = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    let mut exposure = Vec::with_capacity(n);
    let mut claims = Vec::with_capacity(n);
    for &a in &area {
        let va: f64 = veh_age_dist.sample(&mut rng);
        veh_age.push(va.floor().min(100.0));

        let dg: f64 = drv_age_dist.sample(&mut rng);
        let da = (18.0 + dg.round()).min(100.0);
        drv_age.push(da);

        // Bonus-malus decays 5 % per claim-free licensed year from 100 to a
        // floor of 50; past claims multiply it by 1.25 each.
        let years = (da - 18.0 - licence_lag.sample(&mut rng)).max(0.0);
        let k: f64 = malus_steps.sample(&mut rng);
        let bm = (100.0 * 0.95f64.powf(years) * 1.25f64.powf(k)).round();
        bonus.push(bm.clamp(50.0, 230.0));

        let (lo, hi) = AREA_DENSITY_BANDS[a as usize];
        let u: f64 = rng.random();
        let d = (lo.ln() + u * (hi.ln() - lo.ln())).exp().round();
        density.push(d.clamp(1.0, 27_000.0));

        let e = if rng.random::<f64>() < 0.25 {
            1.0
        } else {
            (rng.random::<f64>() * 0.997 + 0.003).min(1.0)
        };
        exposure.push(e);
        let c: f64 = Poisson::new(0.1 * e).expect("positive rate").sample(&mut rng);
        claims.push(c);
    }

    Dataset::new(
        schema,
        vec![
            Column::Numeric(claims),
            Column::Numeric(exposure),
            Column::Categorical(area),
            Column::Categorical(power),
            Column::Numeric(veh_age),
            Column::Numeric(drv_age),
            Column::Numeric(bonus),
            Column::Categorical(brand),
            Column::Categorical(gas),
            Column::Numeric(density),
            Column::Categorical(region),
        ],
    )
    .expect("surrogate columns satisfy the schema")
}
