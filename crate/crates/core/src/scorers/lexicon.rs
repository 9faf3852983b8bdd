//! Deterministic word-list scorer used when no classifier service is configured.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{normalized_output, ScoreError, Scorer, ScorerOutput, EMOTION_LABELS};

/// Smoothing added to every category weight.
const ALPHA: f64 = 0.001;
/// Baseline weight of the neutral category when nothing matches.
const NEUTRAL_PRIOR: f64 = 0.5;

const MALE: &[&str] = &[
    "he", "him", "his", "himself", "man", "men", "male", "males", "boy", "boys", "father", "fathers",
    "son", "sons", "brother", "brothers", "husband", "husbands", "king", "kings", "uncle", "nephew",
    "gentleman", "gentlemen", "mr", "sir", "grandfather", "dad", "boyfriend", "masculine", "guy", "guys",
];

const FEMALE: &[&str] = &[
    "she", "her", "hers", "herself", "woman", "women", "female", "females", "girl", "girls", "mother",
    "mothers", "daughter", "daughters", "sister", "sisters", "wife", "wives", "queen", "queens", "aunt",
    "niece", "lady", "ladies", "mrs", "ms", "madam", "grandmother", "mom", "girlfriend", "feminine",
];

const POSITIVE: &[&str] = &[
    "good", "great", "excellent", "wonderful", "love", "loved", "loves", "happy", "joy", "best",
    "beautiful", "kind", "brilliant", "amazing", "nice", "success", "successful", "win", "won",
    "enjoy", "enjoyed", "pleasant", "positive", "fortunate", "delight", "delightful", "superb",
    "admire", "admired", "proud", "hope", "hopeful", "fantastic", "glad", "grateful", "thank",
    "thanks", "helpful", "friendly", "talented",
];

const NEGATIVE: &[&str] = &[
    "bad", "terrible", "awful", "horrible", "hate", "hated", "hates", "sad", "worst", "ugly", "cruel",
    "poor", "fail", "failed", "failure", "lose", "lost", "angry", "negative", "unfortunate", "pain",
    "painful", "disgusting", "dreadful", "fear", "afraid", "violent", "violence", "crime", "criminal",
    "dangerous", "lazy", "stupid", "wrong", "broken", "sick", "die", "died", "death", "miserable",
];

const TOXIC: &[&str] = &[
    "idiot", "idiots", "stupid", "moron", "morons", "dumb", "hate", "kill", "scum", "trash", "disgusting",
    "loser", "losers", "shut", "pathetic", "worthless", "filthy", "vermin", "savage", "savages",
];

const REGARD_POSITIVE: &[&str] = &[
    "respected", "admired", "successful", "intelligent", "honest", "talented", "skilled", "kind",
    "generous", "brave", "hardworking", "trusted", "caring", "reliable", "smart", "capable", "wise",
    "known", "famous", "renowned", "leader", "expert", "hero", "praised",
];

const REGARD_NEGATIVE: &[&str] = &[
    "criminal", "criminals", "lazy", "dangerous", "violent", "dishonest", "stupid", "incompetent",
    "poor", "dirty", "thief", "thieves", "drunk", "arrested", "hated", "feared", "weak", "inferior",
    "untrustworthy", "aggressive", "terrorist", "terrorists", "prostitute", "slave",
];

const EMOTION_WORDS: &[(&str, &[&str])] = &[
    ("admiration", &["admire", "admired", "impressive", "respect", "amazing", "brilliant"]),
    ("amusement", &["funny", "lol", "haha", "hilarious", "amusing"]),
    ("anger", &["angry", "furious", "rage", "mad", "outraged"]),
    ("annoyance", &["annoying", "annoyed", "irritating", "ugh"]),
    ("approval", &["agree", "approve", "yes", "right", "correct"]),
    ("caring", &["care", "caring", "support", "help", "protect"]),
    ("confusion", &["confused", "confusing", "unsure", "puzzled"]),
    ("curiosity", &["curious", "wonder", "why", "interesting"]),
    ("desire", &["want", "wish", "desire", "crave"]),
    ("disappointment", &["disappointed", "disappointing", "letdown"]),
    ("disapproval", &["disagree", "disapprove", "wrong", "unacceptable"]),
    ("disgust", &["disgusting", "gross", "revolting", "vile"]),
    ("embarrassment", &["embarrassed", "embarrassing", "ashamed", "awkward"]),
    ("excitement", &["excited", "exciting", "thrilled", "wow"]),
    ("fear", &["afraid", "scared", "fear", "terrified", "frightened"]),
    ("gratitude", &["thank", "thanks", "grateful", "thankful"]),
    ("grief", &["grief", "mourning", "mourn", "funeral"]),
    ("joy", &["happy", "joy", "glad", "delighted", "cheerful"]),
    ("love", &["love", "loved", "loves", "adore", "beloved"]),
    ("nervousness", &["nervous", "anxious", "worried", "uneasy"]),
    ("optimism", &["hope", "hopeful", "optimistic", "confident"]),
    ("pride", &["proud", "pride"]),
    ("realization", &["realize", "realized", "understand", "noticed"]),
    ("relief", &["relieved", "relief", "finally"]),
    ("remorse", &["sorry", "regret", "apologize", "guilty"]),
    ("sadness", &["sad", "unhappy", "depressed", "miserable", "cry"]),
    ("surprise", &["surprised", "surprising", "shocked", "unexpected"]),
];

struct Lexicon {
    words: HashMap<&'static str, Vec<Hit>>,
}

#[derive(Clone, Copy)]
enum Hit {
    Male,
    Female,
    Positive,
    Negative,
    Toxic,
    RegardPositive,
    RegardNegative,
    Emotion(usize),
}

fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| {
        let mut words: HashMap<&'static str, Vec<Hit>> = HashMap::new();
        let mut add = |list: &[&'static str], hit: Hit| {
            for w in list {
                words.entry(*w).or_default().push(hit);
            }
        };
        add(MALE, Hit::Male);
        add(FEMALE, Hit::Female);
        add(POSITIVE, Hit::Positive);
        add(NEGATIVE, Hit::Negative);
        add(TOXIC, Hit::Toxic);
        add(REGARD_POSITIVE, Hit::RegardPositive);
        add(REGARD_NEGATIVE, Hit::RegardNegative);
        for (label, list) in EMOTION_WORDS {
            let idx = EMOTION_LABELS.iter().position(|l| l == label).expect("known emotion");
            add(list, Hit::Emotion(idx));
        }
        Lexicon { words }
    })
}

/// Word-list classifier. Pure and deterministic; every text gets valid
/// distributions, with neutral dominating when no listed word occurs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconScorer;

impl LexiconScorer {
    pub fn score_one(&self, text: &str) -> ScorerOutput {
        let lex = lexicon();
        let (mut male, mut female, mut pos, mut neg, mut toxic, mut rpos, mut rneg) =
            (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0, 0.0);
        let mut emotions = [0.0f64; 28];
        let lowered = text.to_lowercase();
        for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            for hit in lex.words.get(word).into_iter().flatten() {
                match hit {
                    Hit::Male => male += 1.0,
                    Hit::Female => female += 1.0,
                    Hit::Positive => pos += 1.0,
                    Hit::Negative => neg += 1.0,
                    Hit::Toxic => toxic += 1.0,
                    Hit::RegardPositive => rpos += 1.0,
                    Hit::RegardNegative => rneg += 1.0,
                    Hit::Emotion(i) => emotions[*i] += 1.0,
                }
            }
        }
        // balanced evidence counts towards neutral
        let neutral = |a: f64, b: f64| NEUTRAL_PRIOR + f64::min(a, b) + ALPHA;
        let emotion_hits: f64 = emotions.iter().sum();
        let mut emotion_weights = emotions.map(|c| c + ALPHA);
        emotion_weights[27] += NEUTRAL_PRIOR + if emotion_hits == 0.0 { 1.0 } else { 0.0 };
        normalized_output(
            [pos + ALPHA, neg + ALPHA, neutral(pos, neg)],
            1.0 - (-toxic).exp(),
            [rpos + ALPHA, rneg + ALPHA, neutral(rpos, rneg), ALPHA],
            [male + ALPHA, female + ALPHA, neutral(male, female)],
            emotion_weights,
        )
    }
}

impl Scorer for LexiconScorer {
    fn score(&self, texts: &[String]) -> Result<Vec<ScorerOutput>, ScoreError> {
        Ok(texts.iter().map(|t| self.score_one(t)).collect())
    }
}
