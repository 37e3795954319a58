#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fusecore/video.hpp"

namespace fusecore {

enum class Shape2D : std::uint8_t { Square, Circle, Triangle };
enum class Color : std::uint8_t { Red, Green, Blue, Yellow };
enum class Direction : std::uint8_t { None, Right, Left, Up, Down };

inline constexpr std::size_t kShapeCount = 3;
inline constexpr std::size_t kColorCount = 4;

std::string_view to_string(Shape2D shape);
std::string_view to_string(Color color);
// "right", "left", "up", "down"; Direction::None maps to "still".
std::string_view to_string(Direction direction);

struct Entity {
  Shape2D shape = Shape2D::Square;
  Color color = Color::Red;
  int x = 0;  // left column of the bounding box
  int y = 0;  // top row of the bounding box
  int size = 6;
  int vx = 0;
  int vy = 0;

  bool moving() const { return vx != 0 || vy != 0; }
  Direction direction() const;
  // "the red square"
  std::string noun() const;
};

// One frame of the world. Entities are drawn in index order, so a later entity
// covers an earlier one (index = z-order).
struct WorldState {
  int width = 32;
  int height = 32;
  std::vector<Entity> entities;
};

enum class EventKind : std::uint8_t { Move, Collide, Stop, Push, Exit, Bounce };
std::string_view to_string(EventKind kind);

struct Event {
  int time = 0;
  EventKind kind = EventKind::Move;
  int subject = 0;
  int object = -1;  // second participant, -1 when there is none
  Direction direction = Direction::None;  // new heading for Bounce / Push / Move
};

struct Trajectory {
  std::vector<WorldState> states;  // one per frame
  std::vector<Event> events;       // non-decreasing time
};

struct WorldConfig {
  int width = 32;
  int height = 32;
  int min_entities = 1;
  int max_entities = 3;
  int entity_size = 8;
  int frames = 16;
  double move_probability = 0.6;
};

// Random initial state drawn from `seed`. Colors are distinct, boxes never
// touch, and at least one entity moves.
WorldState random_world(std::uint64_t seed, const WorldConfig& config);

// Advances one step. Proposed moves are clamped to the walls; overlapping
// proposals are resolved pairwise in index order (both moving: both revert
// and stop; mover into a static entity: the mover reverts and stops, the other
// takes over its velocity); finally an entity touching the wall it is heading
// into reverses. Events are appended with the given time.
WorldState step_world(const WorldState& state, int time, std::vector<Event>& events);

// `frames` states, the first being `initial`. A Move event at time 0 is logged
// for every entity that starts in motion.
Trajectory simulate(const WorldState& initial, int frames);
Trajectory simulate(std::uint64_t seed, const WorldConfig& config);

std::array<double, 3> rgb(Color color);

// Per-pixel owner index (-1 for background) after z-ordered drawing.
std::vector<int> owner_map(const WorldState& state);
bool shape_covers(Shape2D shape, int size, int dx, int dy);

Video render(const Trajectory& trajectory, int channels = 3);

// One mask per entity with at least one visible pixel, in entity order.
std::vector<ObjectMask> synthetic_mask_oracle(const WorldState& state, int frame_index);

// Entity indices sorted by color. Narration lists entities in this order.
std::vector<std::size_t> color_order(const std::vector<Entity>& entities);

// Bounce, Collide and Push events ordered by time, then by the subject's
// color: the events an explanation talks about, in the order it does.
std::vector<Event> causal_events(const Trajectory& trajectory);

struct Narration {
  std::string caption;
  std::string explanation;
  std::string prediction;
};

Narration narrate(const Trajectory& trajectory);
std::string caption_of(const Trajectory& trajectory);
std::string explanation_of(const Trajectory& trajectory);
std::string prediction_of(const WorldState& final_state);

// What the narrator extrapolates for one entity from the final state.
struct Outcome {
  enum class Kind : std::uint8_t { Still, Keeps, Wall, Hit };
  Kind kind = Kind::Still;
  int other = -1;  // entity index for Kind::Hit
};
// One outcome per entity, from up to eight further simulated steps.
std::vector<Outcome> predict_outcomes(const WorldState& final_state);

struct MultipleChoice {
  std::string question;
  std::array<std::string, 4> options;
  int answer = 0;
};

inline constexpr std::string_view kMcqQuestion = "what happens in the video ?";

// The correct option is the caption; each distractor changes one fact
// (color, shape or motion) of one clause and is listed in color order like
// the caption. `seed` fixes distractor choice and
// answer position.
MultipleChoice make_mcq(const Trajectory& trajectory, std::uint64_t seed);

// Every word the narrator and MCQ builder can emit.
const std::vector<std::string>& narration_lexicon();

}  // namespace fusecore
