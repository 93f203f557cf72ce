// Emits the bundled training corpus: deterministic pseudo-English prose from
// a seeded template grammar. Regenerate with:
//   make_corpus --seed 7 --bytes 300000 > data/corpus.txt

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "splitsim/rng.hpp"

namespace {

using splitsim::RngStream;

const char* kNouns[] = {
    "river",   "engine",  "harbor",  "signal",  "garden",  "library", "mountain",
    "letter",  "market",  "bridge",  "lantern", "compass", "village", "orchard",
    "machine", "journey", "winter",  "teacher", "captain", "stranger", "window",
    "forest",  "valley",  "station", "road",    "storm",   "meadow",  "clock",
    "ship",    "tower",   "field",   "doctor",  "child",   "farmer",  "painter",
    "song",    "stone",   "candle",  "harvest", "morning", "box",
    "axle",    "prize"};

const char* kAdjectives[] = {
    "quiet",  "bright",   "narrow", "ancient", "gentle",  "crowded", "distant",
    "heavy",  "pale",     "steady", "curious", "hollow",  "patient", "rusty",
    "silver", "restless", "warm",   "simple",  "crooked", "faithful",
    "lazy",   "exact",    "hazy"};

const char* kVerbsPast[] = {
    "crossed",  "watched",  "repaired", "followed", "painted",  "carried",
    "measured", "opened",   "visited",  "gathered", "remembered", "reached",
    "counted",  "borrowed", "signaled", "guarded",  "traded",   "studied",
    "cleaned",  "answered", "climbed",  "sketched", "greeted",  "mended"};

const char* kAdverbs[] = {"slowly",  "quietly",  "carefully", "rarely",
                          "often",   "finally",  "suddenly",  "gladly",
                          "barely",  "together"};

const char* kPreps[] = {"near", "beyond", "beside", "under", "toward",
                        "across", "behind", "within"};

const char* kNames[] = {"Anna",  "Bruno",  "Clara",  "Dora",   "Elias", "Freya",
                        "Greta", "Henrik", "Ingrid", "Jonas",  "Karl",  "Lena",
                        "Mira",  "Nils",   "Oskar",  "Pavel",  "Quinn", "Rosa",
                        "Sofia", "Tomas",  "Ulla",   "Viktor", "Wilma", "Xenia",
                        "Yara",  "Zora",   "Andr\xc3\xa9", "S\xc3\xb8ren",
                        "J\xc3\xbcrgen"};

const char* kHyphenated[] = {"well-worn", "half-open", "wind-swept", "sun-dried"};

template <std::size_t N>
const char* pick(RngStream& rng, const char* (&arr)[N]) {
    return arr[static_cast<std::size_t>(rng.uniform_int(0, N - 1))];
}

std::string noun_phrase(RngStream& rng) {
    std::string s = rng.next_double() < 0.35 ? "a " : "the ";
    const double kind = rng.next_double();
    if (kind < 0.5) {
        s += pick(rng, kAdjectives);
        s += ' ';
    } else if (kind < 0.58) {
        s += pick(rng, kHyphenated);
        s += ' ';
    } else if (kind < 0.66) {
        s = pick(rng, kNames);
        s += "'s ";
    }
    s += pick(rng, kNouns);
    return s;
}

std::string sentence(RngStream& rng) {
    std::string s;
    const double form = rng.next_double();
    if (form < 0.15) {
        s += pick(rng, kNames);
        s += ' ';
        s += pick(rng, kVerbsPast);
        s += ' ';
        s += noun_phrase(rng);
    } else {
        s += noun_phrase(rng);
        s += ' ';
        if (rng.next_double() < 0.3) {
            s += pick(rng, kAdverbs);
            s += ' ';
        }
        s += pick(rng, kVerbsPast);
        s += ' ';
        s += noun_phrase(rng);
    }
    if (rng.next_double() < 0.4) {
        s += ' ';
        s += pick(rng, kPreps);
        s += ' ';
        s += noun_phrase(rng);
    }
    if (rng.next_double() < 0.12) {
        s += " for ";
        s += std::to_string(rng.uniform_int(2, 90));
        s += rng.next_double() < 0.5 ? " days" : " miles";
    }
    if (rng.next_double() < 0.07) {
        s += " (or so ";
        s += pick(rng, kNames);
        s += " claimed)";
    }
    if (rng.next_double() < 0.12) {
        s += "; ";
        std::string more = noun_phrase(rng);
        more += ' ';
        more += rng.next_double() < 0.5 ? "waited" : "agreed";
        s += more;
    }
    // sentence-initial capital
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    const double tail = rng.next_double();
    s += tail < 0.84 ? "." : (tail < 0.93 ? "?" : "!");
    return s;
}

std::string dialogue(RngStream& rng) {
    std::string s = "\"";
    std::string inner = sentence(rng);
    s += inner;
    s += "\" said ";
    s += pick(rng, kNames);
    s += rng.next_double() < 0.5 ? "." : ", smiling.";
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    std::uint64_t seed = 7;
    std::size_t target_bytes = 300000;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (std::strcmp(argv[i], "--seed") == 0) seed = std::strtoull(argv[i + 1], nullptr, 10);
        if (std::strcmp(argv[i], "--bytes") == 0)
            target_bytes = std::strtoull(argv[i + 1], nullptr, 10);
    }

    RngStream rng(seed, splitsim::fnv1a64("corpus"));
    std::string out;
    out.reserve(target_bytes + 4096);
    int chapter = 0;
    while (out.size() < target_bytes) {
        ++chapter;
        out += "Chapter " + std::to_string(chapter) + ": ";
        std::string title = noun_phrase(rng);
        title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
        out += title + "\n\n";
        const int paragraphs = static_cast<int>(rng.uniform_int(3, 6));
        for (int p = 0; p < paragraphs && out.size() < target_bytes; ++p) {
            const int sentences = static_cast<int>(rng.uniform_int(4, 9));
            for (int s = 0; s < sentences; ++s) {
                if (rng.next_double() < 0.1)
                    out += dialogue(rng);
                else
                    out += sentence(rng);
                out += (s + 1 == sentences) ? "\n" : " ";
            }
            out += "\n";
        }
    }
    std::fwrite(out.data(), 1, out.size(), stdout);
    return 0;
}
