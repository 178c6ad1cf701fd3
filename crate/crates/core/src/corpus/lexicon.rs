//! Built-in desk-scale lexicon: templates and filler inventories for the
//! four domains. Domains share carrier words ("play", "find", "show me",
//! "search for") while slot fillers are domain specific.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Domain, GeneratorConfig};

const SONG_MODIFIERS: &[&str] = &[
    "golden", "broken", "summer", "midnight", "electric", "lonely", "crazy", "sweet", "wild", "scarlet", "velvet",
    "burning", "falling", "dancing", "frozen", "secret", "little", "perfect", "neon", "blue", "purple", "heavy",
    "quiet", "shining", "wicked", "hollow", "endless", "fading", "restless", "sapphire",
];

const SONG_NOUNS: &[&str] = &[
    "heart", "love", "night", "dreams", "fire", "rain", "hearts", "sky", "river", "roses", "thunder", "wings", "tears",
    "angel", "shadows", "highway", "ocean", "moon", "stars", "memories", "kisses", "diamonds", "echoes", "horizon",
    "waves", "flames", "whispers", "storm", "feelings", "melody", "rhythm", "paradise", "lullaby", "romance",
];

const ARTIST_FIRST: &[&str] = &[
    "taylor", "bruno", "ariana", "adele", "drake", "kanye", "rihanna", "shakira", "elton", "freddie", "dolly", "bobby",
    "stevie", "whitney", "mariah", "justin", "selena", "harry", "billie", "lana", "miley", "katy", "frank", "otis",
    "aretha",
];

const ARTIST_LAST: &[&str] = &[
    "swift",
    "mars",
    "grande",
    "keys",
    "lamar",
    "perry",
    "carter",
    "brooks",
    "nelson",
    "parton",
    "wonder",
    "cooper",
    "malone",
    "lambert",
    "young",
    "morrison",
    "simon",
    "springsteen",
    "dylan",
    "marley",
];

const BANDS: &[&str] = &[
    "the beatles",
    "the rolling stones",
    "imagine dragons",
    "coldplay",
    "maroon five",
    "the killers",
    "green day",
    "pearl jam",
    "arctic monkeys",
    "the weeknd",
    "daft punk",
    "the doors",
    "fleetwood mac",
    "the eagles",
    "radiohead",
    "metallica",
    "nirvana",
    "abba",
    "queen",
    "u two",
];

const ALBUM_MODIFIERS: &[&str] = &[
    "greatest",
    "live",
    "acoustic",
    "deluxe",
    "unplugged",
    "classic",
    "essential",
    "complete",
    "lost",
    "hidden",
    "early",
    "best",
];

const ALBUM_NOUNS: &[&str] = &[
    "hits",
    "sessions",
    "collection",
    "recordings",
    "tapes",
    "anthology",
    "years",
    "songs",
    "ballads",
    "remixes",
    "demos",
    "classics",
];

const PLACE_MODIFIERS: &[&str] = &[
    "central",
    "riverside",
    "crescent",
    "lakeview",
    "northside",
    "sunset",
    "downtown",
    "harbor",
    "grand",
    "royal",
    "union",
    "liberty",
    "pioneer",
    "brightwater",
    "oakwood",
    "pinecrest",
    "cedar",
    "highland",
    "bayside",
    "old town",
    "county",
    "eastgate",
    "summit",
    "valley",
    "meadowbrook",
    "granite",
    "silver lake",
    "victory",
    "evergreen",
    "fairview",
];

const PLACE_TYPES: &[&str] = &[
    "park",
    "library",
    "hospital",
    "airport",
    "mall",
    "stadium",
    "museum",
    "station",
    "high school",
    "pharmacy",
    "bakery",
    "diner",
    "cafe",
    "pizza",
    "grill",
    "post office",
    "gas station",
    "zoo",
    "theater",
    "cinema",
    "gym",
    "hotel",
    "market",
    "plaza",
    "bank",
    "church",
    "dental clinic",
    "police station",
    "marina",
    "campground",
];

const STREET_BASES: &[&str] = &[
    "maple",
    "oak",
    "pine",
    "elm",
    "main",
    "washington",
    "lincoln",
    "jefferson",
    "madison",
    "franklin",
    "lake",
    "hill",
    "spring",
    "willow",
    "cherry",
    "walnut",
    "chestnut",
    "broadway",
    "ridge",
    "forest",
    "mill",
    "grove",
    "prospect",
    "birch",
    "poplar",
    "magnolia",
    "sycamore",
    "hickory",
    "dogwood",
    "laurel",
];

const STREET_SUFFIXES: &[&str] = &[
    "street",
    "avenue",
    "road",
    "boulevard",
    "drive",
    "lane",
    "way",
    "court",
    "place",
    "parkway",
];

const ITEM_MODIFIERS: &[&str] = &[
    "organic",
    "wireless",
    "stainless steel",
    "extra large",
    "sugar free",
    "gluten free",
    "bluetooth",
    "waterproof",
    "rechargeable",
    "unscented",
    "whole grain",
    "low fat",
    "portable",
    "cordless",
    "ceramic",
    "cotton",
    "leather",
    "bamboo",
    "glass",
    "plastic",
    "kids",
    "mens",
    "womens",
    "travel",
    "family size",
    "chilled",
    "vanilla",
    "chocolate",
    "spicy",
    "premium",
];

const ITEM_NOUNS: &[&str] = &[
    "bananas",
    "headphones",
    "paper towels",
    "toilet paper",
    "batteries",
    "dog food",
    "cat litter",
    "coffee beans",
    "phone charger",
    "laptop stand",
    "water bottles",
    "running shoes",
    "yoga mat",
    "toothpaste",
    "shampoo",
    "laundry detergent",
    "trash bags",
    "printer ink",
    "light bulbs",
    "diapers",
    "baby wipes",
    "olive oil",
    "peanut butter",
    "almond milk",
    "greek yogurt",
    "protein powder",
    "vitamins",
    "socks",
    "backpack",
    "blender",
    "air fryer",
    "coffee maker",
    "desk lamp",
    "bath towels",
    "pillows",
    "notebook",
    "pens",
    "sunscreen",
    "hand soap",
    "dish soap",
    "sponges",
    "cereal",
    "granola bars",
    "tortilla chips",
    "sparkling water",
    "tea bags",
    "frying pan",
    "kitchen scale",
    "power strip",
    "usb cable",
];

const MUSIC_TEMPLATES: &[&str] = &[
    "play <SongName>",
    "play <SongName> by <ArtistName>",
    "play the song <SongName>",
    "play music by <ArtistName>",
    "play some <ArtistName>",
    "play the album <AlbumName>",
    "play <AlbumName> by <ArtistName>",
    "put on <SongName>",
    "i want to hear <SongName>",
    "can you play <SongName> by <ArtistName>",
    "find <SongName> by <ArtistName>",
    "add <SongName> to my playlist",
    "shuffle <ArtistName>",
    "who sings <SongName>",
    "search for <SongName>",
    "show me songs by <ArtistName>",
    "play <ArtistName> radio",
    "skip to <SongName>",
];

const NAVIGATION_TEMPLATES: &[&str] = &[
    "navigate to <PlaceName>",
    "directions to <PlaceName>",
    "take me to <PlaceName>",
    "take me to <StreetName>",
    "find <PlaceName>",
    "find the <PlaceName> on <StreetName>",
    "how far is <PlaceName>",
    "how long to get to <PlaceName>",
    "i want to go to <PlaceName>",
    "where is <PlaceName>",
    "add a stop at <PlaceName>",
    "search for <PlaceName> near <StreetName>",
    "show me <StreetName> on the map",
    "drive to <PlaceName> on <StreetName>",
    "what time does <PlaceName> close",
    "navigate to <StreetName>",
];

const SHOPPING_TEMPLATES: &[&str] = &[
    "buy <ItemName>",
    "add <ItemName> to my cart",
    "order <ItemName>",
    "find <ItemName>",
    "i want to buy <ItemName>",
    "reorder <ItemName>",
    "add <ItemName> to my shopping list",
    "where is my <ItemName> order",
    "how much is <ItemName>",
    "can you order <ItemName>",
    "search for <ItemName>",
    "show me <ItemName>",
    "buy more <ItemName>",
    "track my order of <ItemName>",
    "put <ItemName> in my cart",
];

const OTHER_TEMPLATES: &[&str] = &[
    "what is the weather <day>",
    "what is the weather like in <city>",
    "will it rain <day>",
    "turn on the <room> <device>",
    "turn off the <room> <device>",
    "dim the <room> lights",
    "set the thermostat to <number> degrees",
    "set a timer for <number> minutes",
    "set an alarm for <number> <ampm>",
    "what time is it",
    "tell me a joke",
    "tell me the news",
    "play <ambient>",
    "how old is <person>",
    "who is <person>",
    "what is <number> plus <number>",
    "what is <number> times <number>",
    "how do you spell <word>",
    "remind me to <chore> <day>",
    "add <chore> to my to do list",
    "find my phone",
    "what is on my calendar <day>",
    "call <contact>",
];

const DAYS: &[&str] = &[
    "today",
    "tomorrow",
    "tonight",
    "this weekend",
    "on monday",
    "on tuesday",
    "on wednesday",
    "on thursday",
    "on friday",
    "on saturday",
    "on sunday",
    "this morning",
    "this afternoon",
    "next week",
];
const CITIES: &[&str] = &[
    "seattle", "boston", "chicago", "denver", "miami", "austin", "portland", "atlanta", "phoenix", "dallas", "detroit",
    "london", "paris", "tokyo", "berlin",
];
const ROOMS: &[&str] = &[
    "kitchen",
    "bedroom",
    "living room",
    "bathroom",
    "office",
    "garage",
    "basement",
    "hallway",
    "dining room",
    "porch",
];
const DEVICES: &[&str] = &[
    "lights",
    "lamp",
    "fan",
    "heater",
    "tv",
    "speaker",
    "plug",
    "air conditioner",
];
const NUMBERS: &[&str] = &[
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "fifteen",
    "twenty",
    "thirty",
    "forty",
    "forty five",
    "sixty",
    "ninety",
    "a hundred",
];
const AM_PM: &[&str] = &["am", "pm", "in the morning", "in the evening"];
const PEOPLE: &[&str] = &[
    "the president",
    "albert einstein",
    "marie curie",
    "barack obama",
    "isaac newton",
    "leonardo da vinci",
    "serena williams",
    "tom hanks",
    "oprah winfrey",
    "neil armstrong",
];
const CHORES: &[&str] = &[
    "take out the trash",
    "call mom",
    "water the plants",
    "pay the bills",
    "walk the dog",
    "clean the kitchen",
    "do laundry",
    "feed the cat",
    "pick up the kids",
    "book a dentist appointment",
    "renew my passport",
];
const WORDS: &[&str] = &[
    "necessary",
    "definitely",
    "restaurant",
    "separate",
    "receive",
    "february",
    "wednesday",
    "beautiful",
    "business",
    "license",
];
const CONTACTS: &[&str] = &[
    "mom",
    "dad",
    "grandma",
    "my brother",
    "my sister",
    "the office",
    "john",
    "sarah",
    "mike",
    "emily",
];
const AMBIENT: &[&str] = &[
    "white noise",
    "rain sounds",
    "ocean sounds",
    "the news",
    "npr",
    "jeopardy",
    "a podcast",
];

/// Syllable pairs for generated names. Each domain has its own onsets and
/// endings, so generated inventories stay disjoint across domains while
/// containing many character-similar neighbors within a domain.
const ARTIST_ONSETS: &[&str] = &[
    "bel", "cor", "dan", "fen", "gal", "jor", "kel", "lor", "mar", "nel", "ros", "sal", "tor", "val", "wen", "bran",
    "cal", "del", "har", "lin", "mor", "per", "ren", "sev", "tam", "vin", "zol", "dar", "fal", "jas",
];
const ARTIST_ENDINGS: &[&str] = &[
    "do", "ez", "ino", "ani", "elli", "ova", "etti", "ian", "ara", "ondo", "ucci", "elle", "anza", "ito", "aro",
    "enti", "ola", "osa", "iki", "umba",
];
const TOWN_ONSETS: &[&str] = &[
    "ash", "brook", "clay", "elm", "fair", "glen", "hart", "kings", "lang", "mill", "north", "ox", "red", "stan",
    "thorn", "wal", "west", "wind", "york", "bar", "chester", "dun", "east", "gold", "haw", "lin", "marsh", "new",
    "rich", "stock",
];
const TOWN_ENDINGS: &[&str] = &[
    "ford", "ton", "ville", "field", "wood", "dale", "haven", "bury", "port", "ridge", "mont", "worth", "stead",
    "wick", "ham", "by", "cliff", "combe", "hurst", "moor",
];
const BRAND_ONSETS: &[&str] = &[
    "zen", "nov", "pur", "flex", "max", "aqu", "ecl", "smar", "prim", "ult", "vel", "kor", "lum", "ter", "qui", "sol",
    "vit", "zap", "bri", "dyn", "gly", "hex", "jup", "kin", "myr", "nex", "opt", "rev", "syn", "tru",
];
const BRAND_ENDINGS: &[&str] = &[
    "ix", "ora", "ex", "ify", "io", "co", "ly", "tek", "ara", "on", "ium", "oxa", "ent", "ubi", "ax", "eon", "ity",
    "ux", "ique", "ova",
];
const SONG_EXTRA: &[&str] = &[
    "bright", "silent", "distant", "gentle", "savage", "amber", "cosmic", "tender", "rebel", "fragile", "lucky",
    "brave", "lazy", "hungry", "sleepy", "mystic", "tropical", "atomic", "magic", "faded",
];
const SONG_NOUNS_EXTRA: &[&str] = &[
    "summertime",
    "goodbye",
    "sunrise",
    "starlight",
    "freedom",
    "heartbeat",
    "daydream",
    "honey",
    "lightning",
    "butterfly",
    "canyon",
    "desert",
    "garden",
    "harmony",
    "island",
    "journey",
    "kingdom",
    "mirror",
    "puzzle",
    "rainbow",
];
const CITIES_EXTRA: &[&str] = &[
    "houston",
    "orlando",
    "nashville",
    "memphis",
    "baltimore",
    "pittsburgh",
    "cleveland",
    "sacramento",
    "honolulu",
    "anchorage",
    "toronto",
    "vancouver",
    "dublin",
    "madrid",
    "rome",
    "sydney",
    "mumbai",
    "cairo",
    "moscow",
    "seoul",
];

/// All onset+ending concatenations, shuffled with a fixed salt.
fn generated_names(onsets: &[&str], endings: &[&str], salt: u64) -> Vec<String> {
    let mut out: Vec<String> = onsets
        .iter()
        .flat_map(|a| endings.iter().map(move |b| format!("{a}{b}")))
        .collect();
    out.sort();
    out.dedup();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_1000 + salt));
    out
}

fn owned_combos(first: &[String], second: &[String], salt: u64) -> Vec<String> {
    let a: Vec<&str> = first.iter().map(String::as_str).collect();
    let b: Vec<&str> = second.iter().map(String::as_str).collect();
    combos(&a, &b, salt)
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

/// Every `a b` combination in a fixed pseudo-random order, so Zipf ranks
/// do not line up with the first word list.
fn combos(first: &[&str], second: &[&str], salt: u64) -> Vec<String> {
    let mut out: Vec<String> = first
        .iter()
        .flat_map(|a| second.iter().map(move |b| format!("{a} {b}")))
        .collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0000 + salt));
    out
}

pub fn default_templates() -> BTreeMap<Domain, Vec<String>> {
    BTreeMap::from([
        (Domain::Music, strings(MUSIC_TEMPLATES)),
        (Domain::Navigation, strings(NAVIGATION_TEMPLATES)),
        (Domain::Shopping, strings(SHOPPING_TEMPLATES)),
        (Domain::Other, strings(OTHER_TEMPLATES)),
    ])
}

pub fn default_fillers() -> BTreeMap<String, Vec<String>> {
    let song_mods: Vec<String> = SONG_MODIFIERS.iter().chain(SONG_EXTRA).map(|s| s.to_string()).collect();
    let song_nouns: Vec<String> = SONG_NOUNS
        .iter()
        .chain(SONG_NOUNS_EXTRA)
        .map(|s| s.to_string())
        .collect();
    let mut songs = owned_combos(&song_mods, &song_nouns, 1);
    let river_of: Vec<String> = SONG_NOUNS
        .iter()
        .zip(SONG_NOUNS.iter().rev())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("{a} of {b}"))
        .collect();
    songs.extend(river_of);

    let surnames = generated_names(ARTIST_ONSETS, ARTIST_ENDINGS, 1);
    let mut artists = strings(BANDS);
    artists.extend(combos(ARTIST_FIRST, ARTIST_LAST, 2));
    artists.extend(owned_combos(&strings(ARTIST_FIRST), &surnames, 7));
    artists.extend(surnames.iter().cloned());
    artists.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0100));

    let towns = generated_names(TOWN_ONSETS, TOWN_ENDINGS, 2);
    let mut places = combos(PLACE_MODIFIERS, PLACE_TYPES, 4);
    places.extend(owned_combos(&towns, &strings(PLACE_TYPES), 8));
    places.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0200));
    let mut street_bases = strings(STREET_BASES);
    street_bases.extend(towns.iter().cloned());
    let streets = owned_combos(&street_bases, &strings(STREET_SUFFIXES), 5);

    let brands = generated_names(BRAND_ONSETS, BRAND_ENDINGS, 3);
    let mut items = combos(ITEM_MODIFIERS, ITEM_NOUNS, 6);
    items.extend(owned_combos(&brands, &strings(ITEM_NOUNS), 9));
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_0300));

    let cities: Vec<String> = CITIES.iter().chain(CITIES_EXTRA).map(|s| s.to_string()).collect();

    let mut fillers = BTreeMap::new();
    fillers.insert("SongName".to_string(), songs);
    fillers.insert("ArtistName".to_string(), artists);
    fillers.insert("AlbumName".to_string(), combos(ALBUM_MODIFIERS, ALBUM_NOUNS, 3));
    fillers.insert("PlaceName".to_string(), places);
    fillers.insert("StreetName".to_string(), streets);
    fillers.insert("ItemName".to_string(), items);
    fillers.insert("city".to_string(), cities);
    for (name, list) in [
        ("day", DAYS),
        ("room", ROOMS),
        ("device", DEVICES),
        ("number", NUMBERS),
        ("ampm", AM_PM),
        ("person", PEOPLE),
        ("chore", CHORES),
        ("word", WORDS),
        ("contact", CONTACTS),
        ("ambient", AMBIENT),
    ] {
        fillers.insert(name.to_string(), strings(list));
    }
    fillers
}

/// Desk-scale generator configuration over the built-in lexicon.
pub fn default_generator_config(seed: u64, utterances_per_domain: usize) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        utterances_per_domain,
        zipf_exponent: 1.0,
        templates: default_templates(),
        fillers: default_fillers(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SlotType;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn valid_and_fillers_unique() {
        let cfg = default_generator_config(1, 10);
        cfg.validate().unwrap();
        for (name, list) in &cfg.fillers {
            let set: HashSet<_> = list.iter().collect();
            assert_eq!(set.len(), list.len(), "duplicate filler in {name}");
        }
    }

    #[test]
    fn slot_inventories_disjoint_across_domains() {
        let fillers = default_fillers();
        let mut owner: HashMap<String, Domain> = HashMap::new();
        for slot in SlotType::ALL {
            for phrase in &fillers[slot.name()] {
                for word in phrase.split_whitespace() {
                    if let Some(prev) = owner.insert(word.to_string(), slot.domain()) {
                        assert_eq!(prev, slot.domain(), "word '{word}' shared across domains");
                    }
                }
            }
        }
    }
}
