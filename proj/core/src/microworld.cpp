#include "fusecore/microworld.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "fusecore/error.hpp"

namespace fusecore {

std::string_view to_string(Shape2D shape) {
  switch (shape) {
    case Shape2D::Square: return "square";
    case Shape2D::Circle: return "circle";
    case Shape2D::Triangle: return "triangle";
  }
  return "?";
}

std::string_view to_string(Color color) {
  switch (color) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Yellow: return "yellow";
  }
  return "?";
}

std::string_view to_string(Direction direction) {
  switch (direction) {
    case Direction::None: return "still";
    case Direction::Right: return "right";
    case Direction::Left: return "left";
    case Direction::Up: return "up";
    case Direction::Down: return "down";
  }
  return "?";
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Move: return "move";
    case EventKind::Collide: return "collide";
    case EventKind::Stop: return "stop";
    case EventKind::Push: return "push";
    case EventKind::Exit: return "exit";
    case EventKind::Bounce: return "bounce";
  }
  return "?";
}

Direction Entity::direction() const {
  if (vx > 0) return Direction::Right;
  if (vx < 0) return Direction::Left;
  if (vy > 0) return Direction::Down;
  if (vy < 0) return Direction::Up;
  return Direction::None;
}

std::string Entity::noun() const {
  return "the " + std::string(to_string(color)) + " " + std::string(to_string(shape));
}

namespace {

void set_direction(Entity& e, Direction d) {
  e.vx = d == Direction::Right ? 1 : d == Direction::Left ? -1 : 0;
  e.vy = d == Direction::Down ? 1 : d == Direction::Up ? -1 : 0;
}

bool boxes_overlap(int ax, int ay, int as, int bx, int by, int bs) {
  return ax < bx + bs && bx < ax + as && ay < by + bs && by < ay + as;
}

}  // namespace

WorldState random_world(std::uint64_t seed, const WorldConfig& config) {
  if (config.min_entities < 0 || config.max_entities < config.min_entities ||
      config.max_entities > static_cast<int>(kColorCount)) {
    throw ConfigError("entity count range must satisfy 0 <= min <= max <= 4");
  }
  if (config.entity_size < 1 || config.width < config.entity_size + 2 || config.height < config.entity_size + 2) {
    throw ConfigError("world too small for its entities");
  }
  std::mt19937_64 rng(seed);
  WorldState world{config.width, config.height, {}};
  const int count = std::uniform_int_distribution<int>(config.min_entities, config.max_entities)(rng);

  std::array<Color, kColorCount> colors{Color::Red, Color::Green, Color::Blue, Color::Yellow};
  std::shuffle(colors.begin(), colors.end(), rng);
  std::uniform_int_distribution<int> shape_dist(0, kShapeCount - 1);
  std::uniform_int_distribution<int> x_dist(1, config.width - config.entity_size - 1);
  std::uniform_int_distribution<int> y_dist(1, config.height - config.entity_size - 1);
  std::uniform_int_distribution<int> dir_dist(1, 4);
  std::bernoulli_distribution moves(config.move_probability);

  for (int i = 0; i < count; ++i) {
    Entity e;
    e.shape = static_cast<Shape2D>(shape_dist(rng));
    e.color = colors[i];
    e.size = config.entity_size;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw ConfigError("cannot place entities without overlap");
      e.x = x_dist(rng);
      e.y = y_dist(rng);
      // Keep a one-pixel gap so that no two entities start in contact.
      const bool clash = std::any_of(world.entities.begin(), world.entities.end(), [&](const Entity& o) {
        return boxes_overlap(e.x - 1, e.y - 1, e.size + 2, o.x, o.y, o.size);
      });
      if (!clash) break;
    }
    if (moves(rng)) set_direction(e, static_cast<Direction>(dir_dist(rng)));
    world.entities.push_back(e);
  }
  const bool any_moving =
      std::any_of(world.entities.begin(), world.entities.end(), [](const Entity& e) { return e.moving(); });
  if (!world.entities.empty() && !any_moving) set_direction(world.entities.front(), static_cast<Direction>(dir_dist(rng)));
  return world;
}

WorldState step_world(const WorldState& state, int time, std::vector<Event>& events) {
  WorldState next = state;
  auto& ents = next.entities;
  const std::size_t n = ents.size();
  std::vector<int> px(n);
  std::vector<int> py(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Entity& e = ents[i];
    px[i] = std::clamp(e.x + e.vx, 0, next.width - e.size);
    py[i] = std::clamp(e.y + e.vy, 0, next.height - e.size);
  }

  // Each resolution sends at least one entity back to its previous position,
  // so n*n rounds always suffice for a valid starting state.
  for (std::size_t round = 0; round <= n * n; ++round) {
    bool found = false;
    std::size_t a = 0;
    std::size_t b = 0;
    for (std::size_t i = 0; i < n && !found; ++i) {
      for (std::size_t j = i + 1; j < n && !found; ++j) {
        if (boxes_overlap(px[i], py[i], ents[i].size, px[j], py[j], ents[j].size)) {
          found = true;
          a = i;
          b = j;
        }
      }
    }
    if (!found) break;
    Entity& ea = ents[a];
    Entity& eb = ents[b];
    const int ia = static_cast<int>(a);
    const int ib = static_cast<int>(b);
    if (ea.moving() && eb.moving()) {
      px[a] = ea.x, py[a] = ea.y, px[b] = eb.x, py[b] = eb.y;
      ea.vx = ea.vy = eb.vx = eb.vy = 0;
      events.push_back({time, EventKind::Collide, ia, ib, Direction::None});
      events.push_back({time, EventKind::Stop, ia, -1, Direction::None});
      events.push_back({time, EventKind::Stop, ib, -1, Direction::None});
    } else if (ea.moving() || eb.moving()) {
      const bool a_moves = ea.moving();
      Entity& mover = a_moves ? ea : eb;
      Entity& target = a_moves ? eb : ea;
      const std::size_t m = a_moves ? a : b;
      const int im = a_moves ? ia : ib;
      const int it = a_moves ? ib : ia;
      px[m] = mover.x, py[m] = mover.y;
      target.vx = mover.vx;
      target.vy = mover.vy;
      mover.vx = mover.vy = 0;
      events.push_back({time, EventKind::Push, im, it, target.direction()});
      events.push_back({time, EventKind::Stop, im, -1, Direction::None});
    } else {
      throw ContractError("world state has overlapping static entities");
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    Entity& e = ents[i];
    e.x = px[i];
    e.y = py[i];
    const bool hit_x = (e.vx > 0 && e.x + e.size == next.width) || (e.vx < 0 && e.x == 0);
    const bool hit_y = (e.vy > 0 && e.y + e.size == next.height) || (e.vy < 0 && e.y == 0);
    if (hit_x || hit_y) {
      e.vx = -e.vx;
      e.vy = -e.vy;
      events.push_back({time, EventKind::Bounce, static_cast<int>(i), -1, e.direction()});
    }
  }
  return next;
}

Trajectory simulate(const WorldState& initial, int frames) {
  if (frames < 1) throw ContractError("simulation needs at least one frame");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(frames));
  traj.states.push_back(initial);
  for (std::size_t i = 0; i < initial.entities.size(); ++i) {
    const Entity& e = initial.entities[i];
    if (e.moving()) traj.events.push_back({0, EventKind::Move, static_cast<int>(i), -1, e.direction()});
  }
  for (int t = 1; t < frames; ++t) traj.states.push_back(step_world(traj.states.back(), t, traj.events));
  return traj;
}

Trajectory simulate(std::uint64_t seed, const WorldConfig& config) {
  return simulate(random_world(seed, config), config.frames);
}

std::array<double, 3> rgb(Color color) {
  switch (color) {
    case Color::Red: return {1.0, 0.0, 0.0};
    case Color::Green: return {0.0, 1.0, 0.0};
    case Color::Blue: return {0.0, 0.0, 1.0};
    case Color::Yellow: return {1.0, 1.0, 0.0};
  }
  return {0.0, 0.0, 0.0};
}

bool shape_covers(Shape2D shape, int size, int dx, int dy) {
  if (dx < 0 || dy < 0 || dx >= size || dy >= size) return false;
  const int cx = 2 * dx + 1 - size;
  const int cy = 2 * dy + 1 - size;
  switch (shape) {
    case Shape2D::Square: return true;
    case Shape2D::Circle: return cx * cx + cy * cy <= (size - 1) * (size - 1) + 1;
    case Shape2D::Triangle: return std::abs(cx) <= dy + 1;  // apex up, base on the bottom row
  }
  return false;
}

std::vector<int> owner_map(const WorldState& state) {
  std::vector<int> owner(static_cast<std::size_t>(state.width * state.height), -1);
  for (std::size_t i = 0; i < state.entities.size(); ++i) {
    const Entity& e = state.entities[i];
    for (int dy = 0; dy < e.size; ++dy) {
      for (int dx = 0; dx < e.size; ++dx) {
        const int x = e.x + dx;
        const int y = e.y + dy;
        if (x < 0 || y < 0 || x >= state.width || y >= state.height) continue;
        if (shape_covers(e.shape, e.size, dx, dy)) owner[static_cast<std::size_t>(y * state.width + x)] = static_cast<int>(i);
      }
    }
  }
  return owner;
}

Video render(const Trajectory& trajectory, int channels) {
  if (trajectory.states.empty()) throw ContractError("cannot render an empty trajectory");
  if (channels != 1 && channels != 3) throw DimensionError("render supports 1 or 3 channels");
  const auto& first = trajectory.states.front();
  const std::size_t t_count = trajectory.states.size();
  const auto h = static_cast<std::size_t>(first.height);
  const auto w = static_cast<std::size_t>(first.width);
  const auto c = static_cast<std::size_t>(channels);
  std::vector<double> data(t_count * h * w * c, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const WorldState& s = trajectory.states[t];
    const std::vector<int> owner = owner_map(s);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (owner[p] < 0) continue;
      const auto color = rgb(s.entities[static_cast<std::size_t>(owner[p])].color);
      double* px = &data[(t * h * w + p) * c];
      if (c == 3) {
        std::copy(color.begin(), color.end(), px);
      } else {
        px[0] = (color[0] + color[1] + color[2]) / 3.0;
      }
    }
  }
  return Video(Tensor::from({t_count, h, w, c}, std::move(data)));
}

std::vector<ObjectMask> synthetic_mask_oracle(const WorldState& state, int frame_index) {
  const std::vector<int> owner = owner_map(state);
  std::vector<ObjectMask> masks;
  for (std::size_t i = 0; i < state.entities.size(); ++i) {
    ObjectMask m;
    m.frame_index = frame_index;
    m.object_id = static_cast<int>(i);
    m.height = static_cast<std::size_t>(state.height);
    m.width = static_cast<std::size_t>(state.width);
    m.pixels.resize(owner.size());
    for (std::size_t p = 0; p < owner.size(); ++p) m.pixels[p] = owner[p] == static_cast<int>(i) ? 1 : 0;
    if (m.count() > 0) masks.push_back(std::move(m));
  }
  return masks;
}

namespace {

// Facts behind one caption clause; MCQ distractors edit exactly one of them.
struct Clause {
  Color color;
  Shape2D shape;
  Direction start;
  Direction end;
};

// Colors are unique within a world, so color order is a canonical order that
// can be read off the frames (unlike entity index, which is draw order).
void sort_by_color(std::vector<Clause>& clauses) {
  std::stable_sort(clauses.begin(), clauses.end(), [](const Clause& a, const Clause& b) { return a.color < b.color; });
}

std::string clause_text(const Clause& c) {
  const std::string noun = "the " + std::string(to_string(c.color)) + " " + std::string(to_string(c.shape));
  const std::string start(to_string(c.start));
  const std::string end(to_string(c.end));
  if (c.start == Direction::None && c.end == Direction::None) return noun + " stays still";
  if (c.start == Direction::None) return noun + " starts moving " + end;
  if (c.end == Direction::None) return noun + " moves " + start + " and stops";
  if (c.start == c.end) return noun + " moves " + start;
  return noun + " moves " + start + " then " + end;
}

std::string join_clauses(const std::vector<std::string>& clauses) {
  std::string out;
  for (const auto& c : clauses) {
    if (!out.empty()) out += " . ";
    out += c;
  }
  return out;
}

std::vector<Clause> caption_clauses(const Trajectory& traj) {
  std::vector<Clause> clauses;
  if (traj.states.empty()) return clauses;
  const auto& first = traj.states.front().entities;
  const auto& last = traj.states.back().entities;
  for (std::size_t i = 0; i < first.size(); ++i) {
    clauses.push_back({first[i].color, first[i].shape, first[i].direction(), last[i].direction()});
  }
  sort_by_color(clauses);
  return clauses;
}

std::string caption_from(const std::vector<Clause>& clauses) {
  const bool any_motion = std::any_of(clauses.begin(), clauses.end(), [](const Clause& c) {
    return c.start != Direction::None || c.end != Direction::None;
  });
  if (!any_motion) return "nothing moves";
  std::vector<std::string> parts;
  for (const auto& c : clauses) parts.push_back(clause_text(c));
  return join_clauses(parts);
}

}  // namespace

std::string caption_of(const Trajectory& trajectory) { return caption_from(caption_clauses(trajectory)); }

std::vector<std::size_t> color_order(const std::vector<Entity>& entities) {
  std::vector<std::size_t> order(entities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return entities[a].color < entities[b].color; });
  return order;
}

std::vector<Event> causal_events(const Trajectory& trajectory) {
  std::vector<Event> out;
  if (trajectory.states.empty()) return out;
  for (const Event& ev : trajectory.events) {
    if (ev.kind == EventKind::Bounce || ev.kind == EventKind::Collide || ev.kind == EventKind::Push) out.push_back(ev);
  }
  const auto& ents = trajectory.states.front().entities;
  std::stable_sort(out.begin(), out.end(), [&](const Event& a, const Event& b) {
    if (a.time != b.time) return a.time < b.time;
    return ents[static_cast<std::size_t>(a.subject)].color < ents[static_cast<std::size_t>(b.subject)].color;
  });
  return out;
}

std::string explanation_of(const Trajectory& trajectory) {
  if (trajectory.states.empty()) return "no events occurred";
  const auto& ents = trajectory.states.front().entities;
  std::vector<std::string> parts;
  for (const Event& ev : causal_events(trajectory)) {
    const std::string subject = ents[static_cast<std::size_t>(ev.subject)].noun();
    switch (ev.kind) {
      case EventKind::Bounce:
        parts.push_back(subject + " hit the wall , so it turned " + std::string(to_string(ev.direction)));
        break;
      case EventKind::Collide:
        parts.push_back(subject + " hit " + ents[static_cast<std::size_t>(ev.object)].noun() + " , so both stopped");
        break;
      case EventKind::Push: {
        const std::string object = ents[static_cast<std::size_t>(ev.object)].noun();
        parts.push_back(subject + " hit " + object + " , so " + object + " started moving " +
                        std::string(to_string(ev.direction)));
        break;
      }
      default:
        break;
    }
  }
  if (parts.empty()) return "no events occurred";
  return join_clauses(parts);
}

std::vector<Outcome> predict_outcomes(const WorldState& final_state) {
  constexpr int kHorizon = 8;
  std::vector<Outcome> outcomes(final_state.entities.size());
  for (std::size_t i = 0; i < final_state.entities.size(); ++i) {
    if (!final_state.entities[i].moving()) continue;
    Outcome& o = outcomes[i];
    o.kind = Outcome::Kind::Keeps;
    const int me = static_cast<int>(i);
    std::vector<Event> future;
    WorldState s = final_state;
    for (int t = 1; t <= kHorizon && o.kind == Outcome::Kind::Keeps; ++t) {
      future.clear();
      s = step_world(s, t, future);
      for (const Event& ev : future) {
        if (ev.kind == EventKind::Bounce && ev.subject == me) {
          o.kind = Outcome::Kind::Wall;
        } else if ((ev.kind == EventKind::Collide || ev.kind == EventKind::Push) &&
                   (ev.subject == me || ev.object == me)) {
          o.kind = Outcome::Kind::Hit;
          o.other = ev.subject == me ? ev.object : ev.subject;
        }
        if (o.kind != Outcome::Kind::Keeps) break;
      }
    }
  }
  return outcomes;
}

std::string prediction_of(const WorldState& final_state) {
  const std::vector<Outcome> outcomes = predict_outcomes(final_state);
  std::vector<std::string> parts;
  for (std::size_t i : color_order(final_state.entities)) {
    const Entity& e = final_state.entities[i];
    switch (outcomes[i].kind) {
      case Outcome::Kind::Still:
        break;
      case Outcome::Kind::Keeps:
        parts.push_back(e.noun() + " keeps moving " + std::string(to_string(e.direction())) + " , confidence high");
        break;
      case Outcome::Kind::Wall:
        parts.push_back(e.noun() + " will hit the wall , confidence high");
        break;
      case Outcome::Kind::Hit:
        parts.push_back(e.noun() + " will hit " +
                        final_state.entities[static_cast<std::size_t>(outcomes[i].other)].noun() +
                        " , confidence medium");
        break;
    }
  }
  if (parts.empty()) return "the scene stays still";
  return join_clauses(parts);
}

Narration narrate(const Trajectory& trajectory) {
  Narration n;
  n.caption = caption_of(trajectory);
  n.explanation = explanation_of(trajectory);
  n.prediction = trajectory.states.empty() ? "the scene stays still" : prediction_of(trajectory.states.back());
  return n;
}

MultipleChoice make_mcq(const Trajectory& trajectory, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  MultipleChoice mcq;
  mcq.question = std::string(kMcqQuestion);
  std::vector<Clause> clauses = caption_clauses(trajectory);
  const std::string correct = caption_from(clauses);
  if (clauses.empty()) clauses.push_back({Color::Red, Shape2D::Square, Direction::None, Direction::None});

  std::set<Color> used;
  for (const auto& c : clauses) used.insert(c.color);

  std::set<std::string> seen{correct};
  std::vector<std::string> distractors;
  std::uniform_int_distribution<std::size_t> pick_clause(0, clauses.size() - 1);
  std::uniform_int_distribution<int> pick_fact(0, 2);
  for (int attempt = 0; distractors.size() < 3; ++attempt) {
    if (attempt > 10000) throw ContractError("cannot build distinct MCQ distractors");
    std::vector<Clause> edited = clauses;
    Clause& c = edited[pick_clause(rng)];
    switch (pick_fact(rng)) {
      case 0: {
        std::vector<Color> free;
        for (std::size_t k = 0; k < kColorCount; ++k) {
          if (!used.contains(static_cast<Color>(k))) free.push_back(static_cast<Color>(k));
        }
        if (free.empty()) continue;
        c.color = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        break;
      }
      case 1:
        c.shape = static_cast<Shape2D>((static_cast<int>(c.shape) + 1 +
                                        std::uniform_int_distribution<int>(0, kShapeCount - 2)(rng)) %
                                       kShapeCount);
        break;
      default: {
        // Change the heading of whichever phase is moving; a still clause gets
        // a motion it never had.
        const auto other = [&](Direction d) {
          if (d == Direction::None) return static_cast<Direction>(std::uniform_int_distribution<int>(1, 4)(rng));
          const int shift = std::uniform_int_distribution<int>(1, 3)(rng);
          return static_cast<Direction>(1 + ((static_cast<int>(d) - 1 + shift) % 4));
        };
        if (c.start == Direction::None && c.end == Direction::None) {
          c.end = other(Direction::None);
        } else if (c.start == c.end) {
          c.start = c.end = other(c.start);
        } else if (c.start != Direction::None) {
          c.start = other(c.start);
        } else {
          c.end = other(c.end);
        }
        break;
      }
    }
    sort_by_color(edited);
    std::string text = caption_from(edited);
    if (seen.insert(text).second) distractors.push_back(std::move(text));
  }

  mcq.answer = std::uniform_int_distribution<int>(0, 3)(rng);
  std::size_t d = 0;
  for (int k = 0; k < 4; ++k) mcq.options[static_cast<std::size_t>(k)] = k == mcq.answer ? correct : distractors[d++];
  return mcq;
}

const std::vector<std::string>& narration_lexicon() {
  static const std::vector<std::string> words = {
      "the",   "red",   "green",    "blue",   "yellow",   "square", "circle", "triangle", "moves",  "right",
      "left",  "up",    "down",     "still",  "then",     "and",    "stops",  "starts",   "moving", "stays",
      "nothing", "hit", "wall",     "so",     "it",       "turned", "both",   "stopped",  "started", "no",
      "events", "occurred", "keeps", "will",  "confidence", "high", "medium", "scene",    "what",   "happens",
      "in",    "video", ".",        ",",      "?"};
  return words;
}

}  // namespace fusecore
