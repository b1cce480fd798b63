"""Template grammar producing a small intent-detection corpus.

Eight intents share carrier phrases ("can you", "please", ...) and some slot
vocabularies (song names between music intents, book titles between book
intents), so expressions learned on one intent can transfer to another.
"""

from __future__ import annotations

import itertools

import numpy as np

from .text import Example

SLOTS = {
    "song": ["yesterday", "hey jude", "let it be", "imagine", "wonderwall", "hotel california", "purple rain", "thriller"],
    "artist": ["the beatles", "adele", "queen", "madonna", "coldplay", "prince"],
    "genre": ["jazz", "rock", "pop", "classical", "blues"],
    "playlist": ["workout", "road trip", "chill", "party", "morning"],
    "book": ["dune", "emma", "the hobbit", "dracula", "ulysses", "beloved", "the odyssey", "hamlet"],
    "author": ["tolkien", "austen", "homer", "herbert"],
    "score": ["one", "two", "three", "four", "five"],
    "city": ["paris", "london", "tokyo", "boston", "berlin", "madrid"],
    "day": ["today", "tomorrow", "tonight", "this weekend", "on monday"],
    "restaurant": ["the olive garden", "luigis", "the sushi bar", "the steak house", "cafe rouge"],
    "count": ["two", "three", "four", "six"],
    "time": ["six am", "seven am", "eight thirty", "noon", "nine pm"],
    "person": ["mom", "john", "sarah", "my boss", "alex"],
    "movie": ["star wars", "titanic", "jaws", "inception", "the matrix", "frozen"],
}

PREFIXES = ["", "", "", "please", "can you", "could you", "i want to", "i would like to"]
SUFFIXES = ["", "", "", "please", "now", "for me"]

CORES = {
    "play_music": [
        "play {song}",
        "play {song} by {artist}",
        "play some {genre} music",
        "play some {genre}",
        "put on {artist}",
        "start playing {song}",
        "play music by {artist}",
        "listen to {song}",
    ],
    "add_to_playlist": [
        "add {song} to my {playlist} playlist",
        "add {song} to {playlist}",
        "add {artist} to my {playlist} playlist",
        "put {song} on my {playlist} playlist",
        "add this song to {playlist}",
        "add {song} by {artist} to my playlist",
        "save {song} in my {playlist} playlist",
        "include {song} in my {playlist} playlist",
    ],
    "search_book": [
        "find the book {book}",
        "search for the book {book}",
        "look up {book} by {author}",
        "find {book}",
        "show me the novel {book}",
        "search for books by {author}",
        "find me a book called {book}",
        "look for the novel {book}",
    ],
    "rate_book": [
        "rate {book} {score} stars",
        "rate the book {book} {score} stars",
        "give {book} {score} stars",
        "rate this book {score} out of five",
        "give the novel {book} {score} points",
        "rate the novel {book} {score} points",
        "give {score} stars to {book}",
        "rate {book} by {author} {score} stars",
    ],
    "get_weather": [
        "what is the weather in {city}",
        "what is the weather {day}",
        "will it rain in {city} {day}",
        "show me the weather in {city}",
        "is it cold in {city}",
        "weather forecast for {city} {day}",
        "tell me the forecast for {city}",
        "will it be sunny {day}",
    ],
    "book_restaurant": [
        "book a table at {restaurant}",
        "book a table for {count} at {restaurant}",
        "reserve a table at {restaurant} {day}",
        "make a reservation at {restaurant}",
        "book {restaurant} for {count} people",
        "reserve a table for {count} {day}",
        "find me a table at {restaurant} {day}",
        "book a table {day}",
    ],
    "set_alarm": [
        "set an alarm for {time}",
        "wake me up at {time}",
        "set an alarm for {time} {day}",
        "create an alarm at {time}",
        "set my alarm to {time}",
        "wake me up {day} at {time}",
        "remind me at {time}",
        "set a wake up alarm for {time}",
    ],
    "send_message": [
        "send a message to {person}",
        "text {person} that i am late",
        "send {person} a message",
        "tell {person} i will be there at {time}",
        "message {person} about {day}",
        "send a text to {person} {day}",
        "text {person} i am on my way",
        "write a message to {person}",
    ],
}

INTENTS = tuple(CORES)
NOVEL_DEFAULT = ("rate_book", "add_to_playlist")


def _fill(template: str, rng: np.random.Generator) -> str:
    out = template
    for key, values in SLOTS.items():
        token = "{" + key + "}"
        while token in out:
            out = out.replace(token, values[rng.integers(len(values))], 1)
    return out


def make_corpus(per_intent: int = 150, seed: int = 0) -> list[Example]:
    """Distinct utterances, ``per_intent`` for every intent, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    corpus = []
    for intent in INTENTS:
        seen: set[str] = set()
        for attempt in itertools.count():
            if len(seen) == per_intent:
                break
            if attempt > 200 * per_intent:
                raise RuntimeError(f"grammar for {intent} cannot yield {per_intent} distinct utterances")
            core = CORES[intent][rng.integers(len(CORES[intent]))]
            prefix = PREFIXES[rng.integers(len(PREFIXES))]
            suffix = SUFFIXES[rng.integers(len(SUFFIXES))]
            text = " ".join(p for p in (prefix, _fill(core, rng), suffix) if p)
            if text not in seen:
                seen.add(text)
                corpus.append(Example(text, intent))
    return corpus
