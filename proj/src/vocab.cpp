#include "pft/tokenizer.hpp"

namespace pft {

namespace {

// 256 words, fixed forever; index order defines token ids (offset by the
// four special ids). Template words "a", "photo", "of" come first.
constexpr std::string_view kWords[] = {
    "a",        "photo",    "of",       "the",      "an",       "image",
    "picture",  "small",    "large",    "tiny",     "huge",     "bright",
    "dark",     "light",    "heavy",    "red",      "green",    "blue",
    "yellow",   "orange",   "purple",   "pink",     "brown",    "black",
    "white",    "gray",     "gold",     "silver",   "copper",   "bronze",
    "dog",      "cat",      "bird",     "fish",     "horse",    "cow",
    "sheep",    "goat",     "pig",      "duck",     "goose",    "hen",
    "owl",      "hawk",     "crow",     "dove",     "swan",     "crane",
    "fox",      "wolf",     "bear",     "deer",     "moose",    "elk",
    "hare",     "mouse",    "rat",      "bat",      "mole",     "otter",
    "seal",     "whale",    "shark",    "crab",     "clam",     "snail",
    "frog",     "toad",     "newt",     "snake",    "lizard",   "turtle",
    "ant",      "bee",      "wasp",     "moth",     "fly",      "beetle",
    "spider",   "worm",     "tree",     "bush",     "grass",    "moss",
    "fern",     "vine",     "leaf",     "stem",     "root",     "seed",
    "flower",   "rose",     "lily",     "daisy",    "tulip",    "iris",
    "oak",      "pine",     "elm",      "birch",    "cedar",    "maple",
    "apple",    "pear",     "plum",     "peach",    "grape",    "lemon",
    "lime",     "melon",    "berry",    "cherry",   "fig",      "date",
    "corn",     "wheat",    "rice",     "bean",     "pea",      "leek",
    "onion",    "garlic",   "carrot",   "potato",   "squash",   "kale",
    "river",    "lake",     "pond",     "sea",      "ocean",    "bay",
    "creek",    "brook",    "marsh",    "swamp",    "dune",     "beach",
    "cliff",    "hill",     "valley",   "canyon",   "cave",     "ridge",
    "peak",     "plain",    "field",    "meadow",   "forest",   "grove",
    "desert",   "tundra",   "glacier",  "island",   "reef",     "shore",
    "stone",    "rock",     "sand",     "clay",     "mud",      "dust",
    "iron",     "steel",    "brass",    "tin",      "lead",     "zinc",
    "glass",    "wood",     "paper",    "cloth",    "wool",     "silk",
    "rope",     "wire",     "chain",    "nail",     "screw",    "bolt",
    "house",    "barn",     "shed",     "cabin",    "tower",    "bridge",
    "road",     "path",     "trail",    "gate",     "fence",    "wall",
    "door",     "window",   "roof",     "floor",    "stair",    "porch",
    "chair",    "table",    "desk",     "bench",    "shelf",    "lamp",
    "clock",    "mirror",   "vase",     "bowl",     "cup",      "plate",
    "spoon",    "fork",     "knife",    "pot",      "pan",      "kettle",
    "boat",     "ship",     "canoe",    "raft",     "truck",    "wagon",
    "cart",     "sled",     "plane",    "glider",   "kite",     "balloon",
    "wheel",    "axle",     "gear",     "lever",    "pulley",   "spring",
    "engine",   "motor",    "pump",     "valve",    "pipe",     "tank",
    "drum",     "bell",     "horn",     "flute",    "harp",     "violin",
    "canvas",   "brush",    "pencil",   "chalk",    "ink",      "crayon",
    "book",     "page",     "letter",   "card",
};
static_assert(sizeof(kWords) / sizeof(kWords[0]) == 256);

}  // namespace

std::span<const std::string_view> vocab_words() {
  return {kWords, sizeof(kWords) / sizeof(kWords[0])};
}

}  // namespace pft
