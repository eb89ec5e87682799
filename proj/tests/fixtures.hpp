#pragma once

#include <memory>

#include "sqd/model.hpp"

namespace sqd::testfix {

// EOS has probability 0.9 in every state.
inline std::shared_ptr<TabularModel> dominant_eos() {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(4), 1);
    model->set_distribution(0, {0.0, 0.9, 0.06, 0.04});
    for (TokenId t = 0; t < 4; ++t) model->set_transition(0, t, 0);
    model->set_default_summary({0.0, 1.0});
    return model;
}

// Three-state chain with a single dominant path: a (0.7) -> b (0.6) -> EOS (0.8).
inline std::shared_ptr<TabularModel> chain() {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(4), 3);
    model->set_distribution(0, {0.0, 0.1, 0.7, 0.2});
    model->set_distribution(1, {0.0, 0.2, 0.2, 0.6});
    model->set_distribution(2, {0.0, 0.8, 0.1, 0.1});
    for (TokenId t = 0; t < 4; ++t) {
        model->set_transition(0, t, 1);
        model->set_transition(1, t, 2);
        model->set_transition(2, t, 2);
    }
    model->set_default_summary({0.0, 1.0});
    return model;
}

// The locally second-best first token ("b") has the globally best
// continuation: from its state EOS is near-certain, while the greedy first
// token ("a") leads to a state that keeps meandering. Greedy search commits
// to "a" and never finds a good finished hypothesis; revisiting "b" wins.
//   state 0: a 0.50, b 0.45, EOS 0.05
//   state A: a 0.40, b 0.35, EOS 0.25   (after "a", self-loop)
//   state B: EOS 0.95, a 0.03, b 0.02   (after "b")
inline std::shared_ptr<TabularModel> local_trap() {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(4), 3);
    model->set_distribution(0, {0.0, 0.05, 0.50, 0.45});
    model->set_distribution(1, {0.0, 0.25, 0.40, 0.35});
    model->set_distribution(2, {0.0, 0.95, 0.03, 0.02});
    for (TokenId t = 0; t < 4; ++t) {
        model->set_transition(0, t, t == 3 ? 2 : 1);
        model->set_transition(1, t, 1);
        model->set_transition(2, t, 1);
    }
    model->set_default_summary({0.0, 1.0});
    return model;
}

}  // namespace sqd::testfix
