//! Bundled vocabulary for synthetic catalogs. Every word is unique across the
//! whole list so a title token maps back to exactly one attribute value.

pub const CATEGORIES: &[&str] = &[
    "dress", "shirt", "jacket", "sneakers", "boots", "handbag", "backpack", "watch", "lamp",
    "sofa", "chair", "desk", "blender", "kettle", "headphones", "speaker", "laptop", "monitor",
    "keyboard", "camera", "tent", "bicycle", "helmet", "mattress", "pillow", "blanket", "towel",
    "mug", "umbrella", "wallet", "scarf", "sunglasses",
];

pub const ATTRIBUTES: &[(&str, &[&str])] = &[
    ("color", &["red", "blue", "green", "black", "white", "pink", "yellow", "purple", "grey", "orange", "beige", "navy"]),
    ("material", &["cotton", "silk", "linen", "wool", "leather", "denim", "polyester", "nylon", "velvet", "bamboo", "cashmere", "suede"]),
    ("pattern", &["striped", "floral", "plaid", "solid", "dotted", "checkered", "paisley", "geometric", "camo", "animalprint"]),
    ("style", &["casual", "formal", "vintage", "sporty", "classic", "boho", "minimalist", "retro", "elegant", "preppy"]),
    ("fit", &["slim", "regular", "relaxed", "loose", "tailored", "skinny", "boxy", "athletic"]),
    ("season", &["summer", "winter", "spring", "autumn", "allseason", "midseason", "monsoon", "holiday"]),
    ("occasion", &["party", "office", "wedding", "travel", "beach", "gym", "outdoor", "lounge"]),
    ("size", &["petite", "small", "medium", "large", "xlarge", "oversized", "compact", "tall"]),
    ("theme", &["dopamine", "cottagecore", "streetwear", "coastal", "grunge", "y2k", "gorpcore", "balletcore"]),
    ("finish", &["matte", "glossy", "satin", "brushed", "polished", "textured", "metallic", "frosted"]),
    ("power", &["cordless", "corded", "rechargeable", "solar", "battery", "plugin", "usbc", "handcrank"]),
    ("connectivity", &["bluetooth", "wireless", "wired", "wifi", "nfc", "zigbee", "infrared", "ethernet"]),
    ("weight", &["featherlight", "lightweight", "midweight", "heavyweight", "ultralight", "sturdy", "portable", "bulky"]),
    ("feature", &["waterproof", "breathable", "insulated", "foldable", "adjustable", "reversible", "stretchy", "washable"]),
    ("origin", &["italian", "japanese", "french", "korean", "nordic", "british", "mexican", "indian"]),
    ("audience", &["womens", "mens", "unisex", "kids", "teens", "seniors", "toddlers", "maternity"]),
    ("texture", &["ribbed", "quilted", "knitted", "woven", "fleece", "crinkled", "smooth", "fuzzy"]),
    ("closure", &["zipper", "buttons", "laces", "velcro", "buckle", "snaps", "drawstring", "magnetic"]),
    ("shape", &["round", "square", "oval", "rectangular", "hexagonal", "triangular", "curved", "angular"]),
    ("scent", &["citrus", "woody", "musky", "vanilla", "lavender", "oceanic", "spicy", "fresh"]),
    ("capacity", &["mini", "standard", "jumbo", "family", "double", "single", "personal", "bulkpack"]),
    ("heel", &["flat", "stiletto", "wedge", "platform", "kitten", "block", "chunky", "lowheel"]),
    ("neckline", &["vneck", "crewneck", "turtleneck", "scoopneck", "halter", "boatneck", "cowl", "squareneck"]),
    ("sleeve", &["sleeveless", "shortsleeve", "longsleeve", "capsleeve", "puffsleeve", "bellsleeve", "raglan", "threequarter"]),
    ("length", &["cropped", "midi", "maxi", "ankle", "knee", "fulllength", "hiplength", "calf"]),
    ("brand", &["acme", "zenith", "nova", "orion", "apex", "lumen", "vertex", "solace"]),
    ("care", &["handwash", "machinewash", "dryclean", "wipeclean", "nocare", "quickdry", "ironfree", "stainproof"]),
    ("warranty", &["oneyear", "twoyear", "threeyear", "lifetime", "limited", "extended", "nowarranty", "fiveyear"]),
    ("certification", &["organic", "recycled", "fairtrade", "vegan", "crueltyfree", "ecolabel", "fsc", "bluesign"]),
];

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn every_word_is_unique_and_a_single_token() {
        let mut seen = BTreeSet::new();
        let all = CATEGORIES
            .iter()
            .chain(ATTRIBUTES.iter().map(|(n, _)| n))
            .chain(ATTRIBUTES.iter().flat_map(|(_, v)| v.iter()));
        for w in all {
            assert!(w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()), "{w}");
            assert!(seen.insert(*w), "duplicate word {w}");
        }
    }
}
