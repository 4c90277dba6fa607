//! Regenerates the bundled mini corpus under `fixtures/mini`.
//!
//! ```text
//! cargo run -p qrel --example mini_corpus [OUT_DIR]
//! ```
//!
//! Image features are the sum of per-object and per-attribute zero-mean
//! prototype vectors plus a little noise, so images that share objects are
//! close in cosine similarity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use qrel::corpus::{write_jsonl, FeatureStore, ImageAnnotation, QuestionRecord};
use qrel::models::init_rng;
use qrel::textfeat::{lexicon_tag, TagLexicon};
use rand::Rng;

const FEATURE_DIM: usize = 32;
const EMBED_DIM: usize = 8;
const SEED: u64 = 2018;

/// `object=attr,attr; object; ...`
const IMAGES: [(&str, &str); 20] = [
    ("img01", "car=red,small; bus=large,yellow; person=standing; traffic light=green"),
    ("img02", "car=blue,large; bus=large,red; traffic light=red; tree=tall"),
    ("img03", "car=white,small; person=walking; traffic light=green; umbrella=black,open"),
    ("img04", "bus=small,white; person=sitting; tree=tall"),
    ("img05", "car=black,old; bus=new,red; person=standing; umbrella=closed,red"),
    ("img06", "dog=brown,small; ball=red; tree=green; person=running"),
    ("img07", "dog=black,large; ball=white; person=sitting"),
    ("img08", "dog=white,small; bird=black; tree=green"),
    ("img09", "ball=yellow; bird=white; person=young; tree=dry"),
    ("img10", "dog=brown,wet; ball=blue; bird=small"),
    ("img11", "cat=black,small; table=wooden; dog=sleeping"),
    ("img12", "cat=white,large; table=empty; umbrella=open"),
    ("img13", "cat=orange,sleeping; table=full; person=sitting"),
    ("img14", "dog=small,white; table=wooden; cat=black"),
    ("img15", "cat=young; umbrella=closed,blue; table=round"),
    ("img16", "horse=brown,large; bird=black; tree=tall"),
    ("img17", "horse=white,young; tree=dry; dog=black"),
    ("img18", "horse=black,old; bird=small; person=standing"),
    ("img19", "horse=brown,small; dog=brown,large"),
    ("img20", "bird=white,large; tree=green; horse=standing"),
];

/// (image, text). The last eight are non-visual questions asked about an image.
const QUESTIONS: [(&str, &str); 50] = [
    ("img01", "what color is the small car"),
    ("img01", "is the traffic light green"),
    ("img01", "how many people are next to the bus"),
    ("img02", "what color is the large bus"),
    ("img02", "is there a tree behind the car"),
    ("img02", "what is the large car doing"),
    ("img03", "who is holding the black umbrella"),
    ("img03", "is the person walking near the car"),
    ("img03", "what color is the traffic light"),
    ("img04", "is the white bus parked under the tree"),
    ("img04", "where is the person sitting"),
    ("img05", "is the old car next to the red bus"),
    ("img05", "why is the umbrella closed"),
    ("img05", "what is the person holding"),
    ("img06", "what is the small dog playing with"),
    ("img06", "is the red ball near the tree"),
    ("img06", "where is the person running"),
    ("img07", "is the large dog chasing the ball"),
    ("img07", "what color is the ball"),
    ("img08", "is the small dog looking at the bird"),
    ("img08", "what kind of bird is this"),
    ("img09", "who is throwing the yellow ball"),
    ("img09", "is the bird sitting in the dry tree"),
    ("img10", "why is the dog wet"),
    ("img10", "what color is the small bird"),
    ("img11", "is the black cat on the table"),
    ("img11", "where is the dog sleeping"),
    ("img12", "what is the large cat looking at"),
    ("img12", "is the table empty"),
    ("img13", "is the cat sleeping on the full table"),
    ("img13", "who is sitting at the table"),
    ("img14", "is the small dog friendly with the cat"),
    ("img14", "what is on the wooden table"),
    ("img15", "is the young cat under the blue umbrella"),
    ("img16", "what color is the large horse"),
    ("img16", "is the black bird on the tall tree"),
    ("img17", "is the young horse eating"),
    ("img17", "what is the dog doing near the horse"),
    ("img18", "who is riding the old horse"),
    ("img18", "where is the small bird"),
    ("img19", "is the large dog running with the horse"),
    ("img20", "what is the large bird doing"),
    ("img02", "what is the meaning of life"),
    ("img04", "who invented the telephone"),
    ("img07", "why is math hard"),
    ("img09", "what is love"),
    ("img12", "how old is the universe"),
    ("img15", "who wrote this poem"),
    ("img18", "what does freedom mean"),
    ("img20", "is it wrong to lie"),
];

const PLURALS: [(&str, &str); 1] = [("people", "person")];

const ANTONYMS: [(&str, &str); 10] = [
    ("small", "large"),
    ("black", "white"),
    ("old", "young"),
    ("old", "new"),
    ("open", "closed"),
    ("empty", "full"),
    ("wet", "dry"),
    ("sitting", "standing"),
    ("red", "green"),
    ("yellow", "blue"),
];

const TAGS: &[(&str, &str)] = &[
    ("what", "WP"), ("who", "WP"), ("where", "WRB"), ("why", "WRB"), ("how", "WRB"),
    ("is", "VBZ"), ("are", "VBP"), ("does", "VBZ"), ("the", "DT"), ("a", "DT"),
    ("this", "DT"), ("it", "PRP"), ("there", "EX"), ("many", "JJ"), ("to", "TO"),
    ("of", "IN"), ("at", "IN"), ("on", "IN"), ("in", "IN"), ("with", "IN"),
    ("near", "IN"), ("under", "IN"), ("behind", "IN"), ("next", "JJ"),
    ("color", "NN"), ("kind", "NN"), ("doing", "VBG"), ("holding", "VBG"),
    ("walking", "VBG"), ("parked", "VBN"), ("sitting", "VBG"), ("playing", "VBG"),
    ("running", "VBG"), ("chasing", "VBG"), ("looking", "VBG"), ("throwing", "VBG"),
    ("sleeping", "VBG"), ("eating", "VBG"), ("riding", "VBG"), ("people", "NNS"),
    ("small", "JJ"), ("large", "JJ"), ("red", "JJ"), ("green", "JJ"), ("white", "JJ"),
    ("black", "JJ"), ("old", "JJ"), ("young", "JJ"), ("yellow", "JJ"), ("blue", "JJ"),
    ("wet", "JJ"), ("dry", "JJ"), ("empty", "JJ"), ("full", "JJ"), ("tall", "JJ"),
    ("wooden", "JJ"), ("friendly", "JJ"), ("closed", "JJ"), ("wrong", "JJ"), ("hard", "JJ"),
    ("meaning", "NN"), ("life", "NN"), ("invented", "VBD"), ("telephone", "NN"),
    ("math", "NN"), ("love", "NN"), ("universe", "NN"), ("wrote", "VBD"), ("poem", "NN"),
    ("freedom", "NN"), ("mean", "VB"), ("lie", "VB"),
];

fn parse_image(iid: &str, spec: &str) -> ImageAnnotation {
    let mut ann = ImageAnnotation {
        iid: iid.to_string(),
        ..Default::default()
    };
    for part in spec.split(';') {
        let (obj, attrs) = part.trim().split_once('=').unwrap_or((part.trim(), ""));
        ann.objects.insert(obj.to_string());
        let attrs: BTreeSet<String> = attrs
            .split(',')
            .filter(|a| !a.is_empty())
            .map(str::to_string)
            .collect();
        if !attrs.is_empty() {
            ann.scene_graph.insert(obj.to_string(), attrs);
        }
    }
    ann
}

fn main() -> qrel::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini"));
    std::fs::create_dir_all(&out).map_err(|e| qrel::Error::InvalidArgument(e.to_string()))?;
    let write = |name: &str, text: String| {
        std::fs::write(out.join(name), text).expect("fixture directory is writable");
    };
    let mut rng = init_rng(SEED);

    let annotations: Vec<ImageAnnotation> = IMAGES.iter().map(|(i, s)| parse_image(i, s)).collect();
    write_jsonl(out.join("annotations.jsonl"), &annotations)?;

    let mut prototypes: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut proto = |name: &str, scale: f32, rng: &mut qrel::models::InitRng| {
        prototypes
            .entry(name.to_string())
            .or_insert_with(|| (0..FEATURE_DIM).map(|_| scale * rng.random_range(-1.0..1.0f32)).collect())
            .clone()
    };
    let mut rows = Vec::new();
    for ann in &annotations {
        let mut v = vec![0.0f32; FEATURE_DIM];
        for obj in &ann.objects {
            let p = proto(obj, 1.0, &mut rng);
            v.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            for attr in ann.scene_graph.get(obj).into_iter().flatten() {
                let p = proto(&format!("{obj}/{attr}"), 0.3, &mut rng);
                v.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            }
        }
        v.iter_mut().for_each(|a| *a += rng.random_range(-0.05..0.05f32));
        rows.push((ann.iid.clone(), v));
    }
    FeatureStore::from_rows(FEATURE_DIM, rows)?.write(out.join("features.bin"))?;

    let mut lexicon = TagLexicon::new("NN")?;
    for (w, t) in TAGS {
        lexicon.insert(w, *t);
    }
    let mut questions = Vec::new();
    let visual_count = QUESTIONS.len() - 8;
    for (n, (iid, text)) in QUESTIONS.iter().enumerate() {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        questions.push(QuestionRecord {
            qid: format!("q{:02}", n + 1),
            text: text.to_string(),
            pos_tags: Some(lexicon_tag(&tokens, &lexicon)),
            tokens,
            iid: Some(iid.to_string()),
            visual: Some(n < visual_count),
        });
    }
    write_jsonl(out.join("questions.jsonl"), &questions)?;

    let mut lex = String::new();
    for (w, t) in TAGS {
        writeln!(lex, "{w}\t{t}").unwrap();
    }
    write("lexicon.tsv", lex);

    let objects: BTreeSet<&str> = annotations
        .iter()
        .flat_map(|a| a.objects.iter().map(String::as_str))
        .collect();
    let mut vocab = String::new();
    for o in &objects {
        writeln!(vocab, "{o}").unwrap();
    }
    for (p, s) in PLURALS {
        writeln!(vocab, "{p}\t{s}").unwrap();
    }
    write("vocab.txt", vocab);

    let mut ant = String::new();
    for (a, b) in ANTONYMS {
        writeln!(ant, "{a}\t{b}").unwrap();
    }
    write("antonyms.tsv", ant);

    let words: BTreeSet<&str> = questions
        .iter()
        .flat_map(|q| q.tokens.iter().map(String::as_str))
        .collect();
    let mut emb = format!("{} {EMBED_DIM}\n", words.len());
    for w in &words {
        emb.push_str(w);
        for _ in 0..EMBED_DIM {
            write!(emb, " {:.4}", rng.random_range(-1.0..1.0f64)).unwrap();
        }
        emb.push('\n');
    }
    write("embeddings.txt", emb);

    eprintln!("wrote mini corpus to {}", out.display());
    Ok(())
}
