//! Seeded generator for a small academic graph (authors, papers, venues,
//! citations) and template questions whose answers and gold action paths are
//! computed from the constructed graph.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::dataset::QaRecord;
use crate::graph::{Graph, GraphBuilder, GraphSchema};
use crate::policy::SearchRng;

const FIRST_NAMES: &[&str] = &[
    "Alice", "Bruno", "Chiara", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ingrid", "Jonas",
    "Keiko", "Lars", "Mira", "Nadia", "Omar", "Priya",
];

const LAST_NAMES: &[&str] = &[
    "Abara",
    "Bergman",
    "Castillo",
    "Dubois",
    "Eriksen",
    "Fontaine",
    "Gallo",
    "Haddad",
    "Ivanova",
    "Jensen",
    "Kowalski",
    "Lindqvist",
    "Moreau",
    "Novak",
    "Okafor",
    "Petrov",
];

const TITLE_WORDS: &[&str] = &[
    "Adaptive",
    "Bayesian",
    "Sparse",
    "Robust",
    "Scalable",
    "Neural",
    "Stochastic",
    "Federated",
    "Quantum",
    "Causal",
    "Kernel",
    "Tensor",
    "Spectral",
    "Dynamic",
    "Sampling",
    "Inference",
    "Embeddings",
    "Clustering",
    "Optimization",
    "Retrieval",
    "Compression",
    "Segmentation",
    "Reasoning",
    "Planning",
    "Transformers",
    "Diffusion",
    "Attention",
    "Hashing",
    "Ranking",
    "Forecasting",
    "Alignment",
    "Matching",
    "Pruning",
    "Distillation",
    "Topology",
    "Calibration",
];

const VENUE_NAMES: &[&str] = &[
    "Machine Intelligence Letters",
    "Data Systems Review",
    "Computational Linguistics Forum",
    "Vision Symposium",
    "Theory Workshop",
    "Robotics Conference",
    "Bioinformatics Journal",
    "Signal Processing Transactions",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteParams {
    pub authors: usize,
    pub papers: usize,
    pub venues: usize,
    /// "How many papers are written by author X?"
    pub count_questions: usize,
    /// "Which venue published the paper Y?"
    pub venue_questions: usize,
    /// "Which paper cited by Y was written by X?"
    pub chain_questions: usize,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            authors: 8,
            papers: 14,
            venues: 4,
            count_questions: 4,
            venue_questions: 4,
            chain_questions: 2,
        }
    }
}

impl SuiteParams {
    /// Same graph size, counting questions only.
    pub fn counting() -> SuiteParams {
        SuiteParams {
            count_questions: 8,
            venue_questions: 0,
            chain_questions: 0,
            ..SuiteParams::default()
        }
    }

    /// Clamps every size into the range the word lists can support.
    fn clamped(&self) -> SuiteParams {
        let authors = self.authors.clamp(1, FIRST_NAMES.len() * LAST_NAMES.len());
        SuiteParams {
            authors,
            papers: self.papers.max(authors),
            venues: self.venues.clamp(1, VENUE_NAMES.len()),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub graph: Graph,
    /// Every record carries its gold path.
    pub records: Vec<QaRecord>,
}

pub fn schema() -> GraphSchema {
    let keys = |k: &[&str]| k.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    GraphSchema {
        node_types: keys(&["author", "paper", "venue"]),
        edge_types: keys(&["author", "paper", "venue", "cites", "cited_by"]),
        feature_keys: BTreeMap::from([
            ("author".to_string(), keys(&["name"])),
            ("paper".to_string(), keys(&["title", "year"])),
            ("venue".to_string(), keys(&["name"])),
        ]),
        primary_feature: BTreeMap::from([
            ("author".to_string(), "name".to_string()),
            ("paper".to_string(), "title".to_string()),
            ("venue".to_string(), "name".to_string()),
        ]),
        description: "An academic graph. Author nodes have the feature 'name' and 'paper' \
            neighbors. Paper nodes have the features 'title' and 'year', and 'author', 'venue', \
            'cites' and 'cited_by' neighbors. Venue nodes have the feature 'name' and 'paper' \
            neighbors."
            .to_string(),
        symmetric_edge_types: Vec::new(),
    }
}

fn fresh_id(rng: &mut SearchRng, used: &mut BTreeSet<String>) -> String {
    loop {
        let id = format!("{:024x}", rng.random::<u128>() >> 32);
        if used.insert(id.clone()) {
            return id;
        }
    }
}

struct Paper {
    id: String,
    title: String,
    authors: Vec<usize>,
    venue: usize,
    cites: Vec<usize>,
}

pub fn generate_synthetic_suite(params: &SuiteParams, seed: u64) -> SynthSuite {
    let p = params.clamped();
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut used = BTreeSet::new();

    let mut full_names: Vec<String> = FIRST_NAMES
        .iter()
        .flat_map(|f| LAST_NAMES.iter().map(move |l| format!("{f} {l}")))
        .collect();
    full_names.shuffle(&mut rng);
    let authors: Vec<(String, String)> = full_names[..p.authors]
        .iter()
        .map(|n| (fresh_id(&mut rng, &mut used), n.clone()))
        .collect();

    let mut venue_names: Vec<&str> = VENUE_NAMES.to_vec();
    venue_names.shuffle(&mut rng);
    let venues: Vec<(String, String)> = venue_names[..p.venues]
        .iter()
        .map(|n| (fresh_id(&mut rng, &mut used), n.to_string()))
        .collect();

    let mut titles = BTreeSet::new();
    let mut papers: Vec<Paper> = Vec::new();
    for i in 0..p.papers {
        let title = loop {
            let words: Vec<&str> = TITLE_WORDS.choose_multiple(&mut rng, 3).copied().collect();
            let key: BTreeSet<&str> = words.iter().copied().collect();
            if titles.insert(key) {
                break words.join(" ");
            }
        };
        let mut author_ids: BTreeSet<usize> = BTreeSet::new();
        if i < p.authors {
            author_ids.insert(i);
        }
        let extra = rng.random_range(0..3usize);
        for _ in 0..extra.max(usize::from(author_ids.is_empty())) {
            author_ids.insert(rng.random_range(0..p.authors));
        }
        let n_cites = rng.random_range(0..=i.min(3));
        let cites: Vec<usize> = index::sample(&mut rng, i.max(1), n_cites.min(i))
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        papers.push(Paper {
            id: fresh_id(&mut rng, &mut used),
            title,
            authors: author_ids.into_iter().collect(),
            venue: rng.random_range(0..p.venues),
            cites,
        });
    }

    let mut b = GraphBuilder::new(schema()).expect("static schema is valid");
    for (id, name) in authors.iter().chain(venues.iter()) {
        let ty = if authors.iter().any(|a| &a.0 == id) {
            "author"
        } else {
            "venue"
        };
        b.add_node(id, ty, &[("name", name)]).expect("fresh ids");
    }
    for paper in &papers {
        let year = rng.random_range(2000..=2022).to_string();
        b.add_node(
            &paper.id,
            "paper",
            &[("title", &paper.title), ("year", &year)],
        )
        .expect("fresh ids");
    }
    for paper in &papers {
        for &a in &paper.authors {
            b.add_edge(&authors[a].0, &paper.id, "paper").unwrap();
            b.add_edge(&paper.id, &authors[a].0, "author").unwrap();
        }
        let v = &venues[paper.venue].0;
        b.add_edge(&paper.id, v, "venue").unwrap();
        b.add_edge(v, &paper.id, "paper").unwrap();
        for &c in &paper.cites {
            b.add_edge(&paper.id, &papers[c].id, "cites").unwrap();
            b.add_edge(&papers[c].id, &paper.id, "cited_by").unwrap();
        }
    }
    let graph = b
        .build()
        .expect("generated edges reference generated nodes");

    let mut records = Vec::new();
    let count_of = |a: usize| papers.iter().filter(|pp| pp.authors.contains(&a)).count();
    for (k, a) in index::sample(&mut rng, p.authors, p.count_questions.min(p.authors))
        .into_iter()
        .enumerate()
    {
        let (aid, name) = &authors[a];
        let n = count_of(a).to_string();
        let mut r = QaRecord::new(
            &format!("s{seed}-count-{k}"),
            &format!("How many papers are written by author {name}?"),
            vec![n.clone()],
        );
        r.topic_node = Some(aid.clone());
        r.gold_path = Some(vec![
            Action::retrieve(name),
            Action::degree(aid, "paper"),
            Action::finish(&n),
        ]);
        records.push(r);
    }
    for (k, i) in index::sample(&mut rng, p.papers, p.venue_questions.min(p.papers))
        .into_iter()
        .enumerate()
    {
        let paper = &papers[i];
        let venue = &venues[paper.venue].1;
        let mut r = QaRecord::new(
            &format!("s{seed}-venue-{k}"),
            &format!("Which venue published the paper {}?", paper.title),
            vec![venue.clone()],
        );
        r.topic_node = Some(paper.id.clone());
        r.gold_path = Some(vec![
            Action::retrieve(&paper.title),
            Action::neighbours(&paper.id, "venue"),
            Action::finish(venue),
        ]);
        records.push(r);
    }
    // (citing paper, author, cited paper) where the author wrote exactly one
    // of the citing paper's references.
    let mut chains = Vec::new();
    for (y, citing) in papers.iter().enumerate() {
        for &c in &citing.cites {
            for &a in &papers[c].authors {
                let hits = citing
                    .cites
                    .iter()
                    .filter(|&&o| papers[o].authors.contains(&a))
                    .count();
                if hits == 1 {
                    chains.push((y, a, c));
                }
            }
        }
    }
    let picks =
        index::sample(&mut rng, chains.len(), p.chain_questions.min(chains.len())).into_vec();
    for (k, j) in picks.into_iter().enumerate() {
        let (y, a, c) = chains[j];
        let (aid, name) = &authors[a];
        let answer = papers[c].title.clone();
        let mut r = QaRecord::new(
            &format!("s{seed}-chain-{k}"),
            &format!(
                "Which paper cited by {} was written by {name}?",
                papers[y].title
            ),
            vec![answer.clone()],
        );
        r.topic_node = Some(papers[y].id.clone());
        r.gold_path = Some(vec![
            Action::retrieve(&papers[y].title),
            Action::neighbours(&papers[y].id, "cites"),
            Action::retrieve(name),
            Action::neighbours(aid, "paper"),
            Action::finish(&answer),
        ]);
        records.push(r);
    }
    SynthSuite { graph, records }
}
