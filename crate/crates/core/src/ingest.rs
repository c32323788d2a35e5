//! Concert archive CSV to programming network and composer covariates.
//!
//! Each CSV row is one piece performed in one concert. Composers become
//! nodes; composer `i` sends a tie to composer `j` when some concert played a
//! piece by `i` before a piece by `j`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariates::CovariateTable;
use crate::error::{Error, Result};
use crate::network::DirectedNetwork;

pub const CSV_HEADER: [&str; 7] = [
    "concert_id",
    "season",
    "order_index",
    "composer_name",
    "piece_title",
    "birth_year",
    "region",
];

/// Node label given to traditional and anonymous works.
pub const ANONYMOUS: &str = "Anonymous";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Region {
    European,
    NorthAmerican,
    SouthAmerican,
    Asian,
    Other,
}

impl Region {
    /// Regions with a dummy column; `Other` is the reference category.
    pub const DUMMIES: [Region; 4] = [
        Region::European,
        Region::NorthAmerican,
        Region::SouthAmerican,
        Region::Asian,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "european" | "europe" => Some(Region::European),
            "northamerican" | "northamerica" => Some(Region::NorthAmerican),
            "southamerican" | "southamerica" => Some(Region::SouthAmerican),
            "asian" | "asia" => Some(Region::Asian),
            "other" => Some(Region::Other),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::European => "European",
            Region::NorthAmerican => "NorthAmerican",
            Region::SouthAmerican => "SouthAmerican",
            Region::Asian => "Asian",
            Region::Other => "Other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PieceType {
    Overture,
    Concerto,
    Symphony,
    Other,
}

impl PieceType {
    pub const ALL: [PieceType; 4] = [
        PieceType::Overture,
        PieceType::Concerto,
        PieceType::Symphony,
        PieceType::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PieceType::Overture => "overture",
            PieceType::Concerto => "concerto",
            PieceType::Symphony => "symphony",
            PieceType::Other => "other",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// One performed piece.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcertRecord {
    pub concert_id: String,
    pub season: String,
    pub order_index: u32,
    pub composer_name: String,
    pub piece_title: String,
    pub birth_year: Option<i32>,
    pub region: Option<Region>,
}

/// Trims and collapses internal whitespace runs to one space.
pub fn canonical_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Assigns a piece to exactly one category by keyword, checking
/// "overture", then "concerto", then "symphony", case-insensitively.
pub fn classify_piece(title: &str) -> Result<PieceType> {
    if title.trim().is_empty() {
        return Err(Error::Input("empty piece title".into()));
    }
    let lower = title.to_lowercase();
    Ok(if lower.contains("overture") {
        PieceType::Overture
    } else if lower.contains("concerto") {
        PieceType::Concerto
    } else if lower.contains("symphony") {
        PieceType::Symphony
    } else {
        PieceType::Other
    })
}

fn is_anonymous(name: &str) -> bool {
    let lower = canonical_name(name).to_lowercase();
    ["traditional", "anonymous"].iter().any(|kw| {
        lower
            .strip_prefix(kw)
            .is_some_and(|rest| rest.chars().next().is_none_or(|c| !c.is_alphanumeric()))
    })
}

/// Parses the archive CSV. Schema problems are reported with the offending
/// line number.
pub fn read_records<R: Read>(r: R) -> Result<Vec<ConcertRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != CSV_HEADER {
        return Err(Error::Schema {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                CSV_HEADER.join(","),
                got.join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let schema = |message: String| Error::Schema { line, message };
        let field = |k: usize| row.get(k).unwrap_or("");
        let concert_id = field(0).to_string();
        if concert_id.is_empty() {
            return Err(schema("empty concert_id".into()));
        }
        let order_index: u32 = field(2)
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| schema(format!("order_index must be an integer >= 1, got {:?}", field(2))))?;
        let composer_name = canonical_name(field(3));
        if composer_name.is_empty() {
            return Err(schema("empty composer_name".into()));
        }
        let piece_title = field(4).to_string();
        if piece_title.is_empty() {
            return Err(schema("empty piece_title".into()));
        }
        let birth_year = match field(5) {
            "" => None,
            s => Some(
                s.parse::<i32>()
                    .map_err(|_| schema(format!("birth_year is not an integer: {s:?}")))?,
            ),
        };
        let region = match field(6) {
            "" => None,
            s => Some(Region::parse(s).ok_or_else(|| schema(format!("unknown region {s:?}")))?),
        };
        if (birth_year.is_none() || region.is_none()) && !is_anonymous(&composer_name) {
            return Err(schema(format!(
                "missing birth_year or region for named composer {composer_name:?}"
            )));
        }
        records.push(ConcertRecord {
            concert_id,
            season: field(1).to_string(),
            order_index,
            composer_name,
            piece_title,
            birth_year,
            region,
        });
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records)
}

/// Median birth year over distinct named composers, rounded half away from
/// zero. `None` when no named composer carries a year.
pub fn default_birth_year(records: &[ConcertRecord]) -> Option<i32> {
    let per_composer: BTreeMap<&str, i32> = records
        .iter()
        .filter(|r| !is_anonymous(&r.composer_name))
        .filter_map(|r| Some((r.composer_name.as_str(), r.birth_year?)))
        .collect();
    let mut years: Vec<i32> = per_composer.into_values().collect();
    if years.is_empty() {
        return None;
    }
    years.sort_unstable();
    let m = years.len();
    let median = if m % 2 == 1 {
        f64::from(years[m / 2])
    } else {
        (f64::from(years[m / 2 - 1]) + f64::from(years[m / 2])) / 2.0
    };
    Some(median.round() as i32)
}

/// Collapses traditional and anonymous composers into a single
/// [`ANONYMOUS`] node with region `Other` and the default birth year.
pub fn handle_anonymous(records: Vec<ConcertRecord>) -> Vec<ConcertRecord> {
    if !records.iter().any(|r| is_anonymous(&r.composer_name)) {
        return records;
    }
    let year = default_birth_year(&records);
    records
        .into_iter()
        .map(|mut r| {
            if is_anonymous(&r.composer_name) {
                r.composer_name = ANONYMOUS.to_string();
                r.region = Some(Region::Other);
                r.birth_year = year;
            }
            r
        })
        .collect()
}

/// Canonical node order: sorted distinct composer names.
pub fn node_order(records: &[ConcertRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| canonical_name(&r.composer_name))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Per-composer metadata and piece-type flags before standardization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComposerProfile {
    pub name: String,
    pub birth_year: i32,
    pub region: Region,
    /// Overture, concerto, symphony, other.
    pub piece_flags: [bool; 4],
}

/// Aggregates per-composer metadata over all performances. Fails when a
/// composer's birth year or region disagree between rows.
pub fn composer_profiles(records: &[ConcertRecord]) -> Result<Vec<ComposerProfile>> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut by_name: BTreeMap<String, (Option<i32>, Option<Region>, [bool; 4])> = BTreeMap::new();
    for r in records {
        let name = canonical_name(&r.composer_name);
        let kind = classify_piece(&r.piece_title)?;
        match by_name.get_mut(&name) {
            None => {
                let mut flags = [false; 4];
                flags[kind.slot()] = true;
                by_name.insert(name, (r.birth_year, r.region, flags));
            }
            Some((year, region, flags)) => {
                if *year != r.birth_year || *region != r.region {
                    return Err(Error::Ingest(format!(
                        "inconsistent birth_year/region for composer {name:?}"
                    )));
                }
                flags[kind.slot()] = true;
            }
        }
    }
    by_name
        .into_iter()
        .map(|(name, (year, region, piece_flags))| {
            let (Some(birth_year), Some(region)) = (year, region) else {
                return Err(Error::Ingest(format!(
                    "missing birth_year or region for composer {name:?}"
                )));
            };
            Ok(ComposerProfile {
                name,
                birth_year,
                region,
                piece_flags,
            })
        })
        .collect()
}

/// Design-matrix column names in order.
pub fn covariate_columns() -> Vec<String> {
    let mut cols: Vec<String> = Region::DUMMIES
        .iter()
        .map(|r| format!("region_{}", r.name()))
        .collect();
    cols.push("birth_year".into());
    cols.extend(PieceType::ALL.iter().map(|p| format!("piece_{}", p.name())));
    cols
}

/// Mean and sample standard deviation used to standardize birth year.
pub fn birth_year_scale(profiles: &[ComposerProfile]) -> (f64, f64) {
    let n = profiles.len() as f64;
    let mean = profiles.iter().map(|p| f64::from(p.birth_year)).sum::<f64>() / n;
    let sd = if profiles.len() > 1 {
        (profiles
            .iter()
            .map(|p| (f64::from(p.birth_year) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Builds the nodal design matrix: region dummies (reference `Other`),
/// standardized birth year and the four piece-type flags.
pub fn aggregate_covariates(records: &[ConcertRecord]) -> Result<CovariateTable> {
    let profiles = composer_profiles(records)?;
    Ok(covariates_from_profiles(&profiles))
}

fn covariates_from_profiles(profiles: &[ComposerProfile]) -> CovariateTable {
    let (mean, sd) = birth_year_scale(profiles);
    let cols = covariate_columns();
    let mut values = DMatrix::zeros(profiles.len(), cols.len());
    for (k, p) in profiles.iter().enumerate() {
        if let Some(r) = Region::DUMMIES.iter().position(|&r| r == p.region) {
            values[(k, r)] = 1.0;
        }
        values[(k, 4)] = if sd > 0.0 {
            (f64::from(p.birth_year) - mean) / sd
        } else {
            0.0
        };
        for (slot, &flag) in p.piece_flags.iter().enumerate() {
            values[(k, 5 + slot)] = f64::from(u8::from(flag));
        }
    }
    let ids = profiles.iter().map(|p| p.name.clone()).collect();
    CovariateTable::new(ids, cols, values).expect("shapes agree by construction")
}

/// Checks that each concert's order indices are 1..k without gaps or
/// duplicates.
pub fn validate_concert_order(records: &[ConcertRecord]) -> Result<()> {
    let mut by_concert: HashMap<&str, Vec<u32>> = HashMap::new();
    for r in records {
        by_concert.entry(&r.concert_id).or_default().push(r.order_index);
    }
    let mut concerts: Vec<_> = by_concert.into_iter().collect();
    concerts.sort_by(|a, b| a.0.cmp(b.0));
    for (id, mut idx) in concerts {
        idx.sort_unstable();
        if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Ingest(format!(
                "duplicate order_index {} in concert {id:?}",
                w[0]
            )));
        }
        if idx.iter().enumerate().any(|(k, &v)| v as usize != k + 1) {
            return Err(Error::Ingest(format!(
                "order_index values of concert {id:?} are not 1..{}",
                idx.len()
            )));
        }
    }
    Ok(())
}

/// Union over concerts of "composer p played before composer q" ties.
pub fn build_network(records: &[ConcertRecord], symmetric: bool) -> Result<DirectedNetwork> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    validate_concert_order(records)?;
    let ids = node_order(records);
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut by_concert: HashMap<&str, Vec<(u32, usize)>> = HashMap::new();
    for r in records {
        let node = index[canonical_name(&r.composer_name).as_str()];
        by_concert.entry(&r.concert_id).or_default().push((r.order_index, node));
    }
    let mut edges = BTreeSet::new();
    for program in by_concert.values_mut() {
        program.sort_unstable();
        for (p, &(_, from)) in program.iter().enumerate() {
            for &(_, to) in &program[p + 1..] {
                if from != to {
                    edges.insert((from, to));
                }
            }
        }
    }
    let net = DirectedNetwork::from_edges(ids, edges, false)?;
    Ok(if symmetric { net.symmetrize() } else { net })
}

/// Share of performed pieces in each category, in [`PieceType::ALL`] order.
pub fn piece_type_shares(records: &[ConcertRecord]) -> Result<[f64; 4]> {
    let mut counts = [0usize; 4];
    for r in records {
        counts[classify_piece(&r.piece_title)?.slot()] += 1;
    }
    let total = records.len().max(1) as f64;
    Ok(counts.map(|c| c as f64 / total))
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeEntry {
    pub node_id: String,
    pub degree: usize,
}

/// Top `k` nodes by degree, ties broken by node id.
pub fn top_degrees(net: &DirectedNetwork, degrees: &[usize], k: usize) -> Vec<DegreeEntry> {
    let mut order: Vec<usize> = (0..net.n()).collect();
    order.sort_by(|&a, &b| {
        degrees[b]
            .cmp(&degrees[a])
            .then_with(|| net.node_ids()[a].cmp(&net.node_ids()[b]))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| DegreeEntry {
            node_id: net.node_ids()[i].clone(),
            degree: degrees[i],
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub concerts: usize,
    pub nodes: usize,
    pub edges: usize,
    pub symmetric: bool,
    pub piece_type_shares: BTreeMap<String, f64>,
    pub default_birth_year: Option<i32>,
    pub birth_year_mean: f64,
    pub birth_year_sd: f64,
    pub top_out_degree: Vec<DegreeEntry>,
    pub top_in_degree: Vec<DegreeEntry>,
}

/// Result of the whole preprocessing pipeline.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub network: DirectedNetwork,
    pub covariates: CovariateTable,
    pub profiles: Vec<ComposerProfile>,
    pub report: IngestReport,
}

/// Full pipeline over parsed records: anonymous merge, network, covariates
/// and the summary report with `top_k` degree tables.
pub fn ingest(records: Vec<ConcertRecord>, symmetric: bool, top_k: usize) -> Result<Ingested> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let default_year = default_birth_year(&records);
    let records = handle_anonymous(records);
    let network = build_network(&records, symmetric)?;
    let profiles = composer_profiles(&records)?;
    let covariates = covariates_from_profiles(&profiles);
    debug_assert_eq!(covariates.node_ids(), network.node_ids());
    let (mean, sd) = birth_year_scale(&profiles);
    let shares = piece_type_shares(&records)?;
    let concerts = records.iter().map(|r| r.concert_id.as_str()).collect::<BTreeSet<_>>().len();
    let report = IngestReport {
        rows: records.len(),
        concerts,
        nodes: network.n(),
        edges: network.edge_count(),
        symmetric,
        piece_type_shares: PieceType::ALL
            .iter()
            .map(|p| (p.name().to_string(), shares[p.slot()]))
            .collect(),
        default_birth_year: default_year.filter(|_| profiles.iter().any(|p| p.name == ANONYMOUS)),
        birth_year_mean: mean,
        birth_year_sd: sd,
        top_out_degree: top_degrees(&network, &network.out_degrees(), top_k),
        top_in_degree: top_degrees(&network, &network.in_degrees(), top_k),
    };
    Ok(Ingested {
        network,
        covariates,
        profiles,
        report,
    })
}
