#include "thermaco/session_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace thermaco {
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string header_bytes(const GridFileHeader& h) {
  std::string out(kFrameMagic, 4);
  put_u32(out, h.height);
  put_u32(out, h.width);
  put_u32(out, h.count);
  return out;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing file '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Returns the payload following a checked header.
std::string_view parse_header(const fs::path& path, const std::string& bytes, GridFileHeader& header,
                              std::size_t element_size) {
  if (bytes.size() < kFrameHeaderBytes) throw IoError("'" + path.string() + "': truncated header");
  if (std::memcmp(bytes.data(), kFrameMagic, 4) != 0) {
    throw IoError("'" + path.string() + "': bad magic (expected THW1)");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  header.height = get_u32(p + 4);
  header.width = get_u32(p + 8);
  header.count = get_u32(p + 12);
  const std::size_t grid = static_cast<std::size_t>(header.height) * header.width * element_size;
  const std::size_t payload = bytes.size() - kFrameHeaderBytes;
  if (grid == 0 || payload % grid != 0 || payload / grid != header.count) {
    const std::size_t held = grid == 0 ? 0 : payload / grid;
    throw IoError("'" + path.string() + "': length inconsistency: header declares " + std::to_string(header.count) +
                  " frames, file holds " + std::to_string(held) + (grid != 0 && payload % grid ? " (plus a partial frame)" : ""));
  }
  return std::string_view(bytes).substr(kFrameHeaderBytes);
}

ordered_json schedule_to_json(const std::vector<TaskSegment>& schedule) {
  ordered_json arr = ordered_json::array();
  for (const auto& seg : schedule) {
    arr.push_back({{"name", seg.name}, {"label", seg.label}, {"start_s", seg.start_s}, {"end_s", seg.end_s}});
  }
  return arr;
}

template <typename T>
T require(const ordered_json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw IoError("'" + where.string() + "': manifest missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + where.string() + "': manifest key '" + key + "' has the wrong type");
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_float_grids(const fs::path& path, const GridFileHeader& header, std::span<const float> values) {
  std::string bytes = header_bytes(header);
  bytes.reserve(bytes.size() + values.size() * 4);
  for (float v : values) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  write_file(path, bytes);
}

void write_byte_grids(const fs::path& path, const GridFileHeader& header, std::span<const std::uint8_t> values) {
  std::string bytes = header_bytes(header);
  bytes.append(reinterpret_cast<const char*>(values.data()), values.size());
  write_file(path, bytes);
}

std::vector<float> read_float_grids(const fs::path& path, GridFileHeader& header) {
  const std::string bytes = read_file(path);
  auto payload = parse_header(path, bytes, header, 4);
  std::vector<float> out(payload.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return out;
}

std::vector<std::uint8_t> read_byte_grids(const fs::path& path, GridFileHeader& header) {
  const std::string bytes = read_file(path);
  auto payload = parse_header(path, bytes, header, 1);
  return std::vector<std::uint8_t>(payload.begin(), payload.end());
}

fs::path write_session(const SessionRecord& session, const fs::path& directory) {
  session.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec || !fs::is_directory(directory)) {
    throw IoError("cannot create session directory '" + directory.string() + "'");
  }
  const GridFileHeader header{static_cast<std::uint32_t>(session.height), static_cast<std::uint32_t>(session.width),
                              static_cast<std::uint32_t>(session.frame_count())};
  write_float_grids(directory / "frames.bin", header, session.frames);
  write_byte_grids(directory / "mask.bin", header, session.masks);
  write_byte_grids(directory / "parts.bin", header, session.parts);

  std::string csv = "time_s,value\n";
  for (std::size_t i = 0; i < session.eda.size(); ++i) {
    csv += format_double(static_cast<double>(i) / session.eda_rate_hz);
    csv += ',';
    csv += format_double(session.eda[i]);
    csv += '\n';
  }
  write_file(directory / "eda.csv", csv);

  ordered_json manifest;
  manifest["format"] = "thermaco-session";
  manifest["version"] = 1;
  manifest["session_id"] = session.session_id;
  manifest["participant_id"] = session.participant_id;
  manifest["distance_feet"] = session.distance_feet;
  manifest["seed"] = session.seed;
  manifest["thermal_fps"] = session.thermal_fps;
  manifest["eda_rate_hz"] = session.eda_rate_hz;
  manifest["height"] = session.height;
  manifest["width"] = session.width;
  manifest["frame_count"] = session.frame_count();
  manifest["eda_count"] = session.eda.size();
  manifest["task_schedule"] = schedule_to_json(session.task_schedule);
  manifest["files"] = {{"frames", "frames.bin"}, {"mask", "mask.bin"}, {"parts", "parts.bin"}, {"eda", "eda.csv"}};
  const fs::path manifest_path = directory / "manifest.json";
  write_file(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

SessionRecord read_session(const fs::path& directory) {
  const fs::path manifest_path = directory / "manifest.json";
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("'" + manifest_path.string() + "': malformed manifest: " + e.what());
  }
  SessionRecord s;
  s.session_id = require<std::string>(manifest, "session_id", manifest_path);
  s.participant_id = require<std::string>(manifest, "participant_id", manifest_path);
  s.distance_feet = require<double>(manifest, "distance_feet", manifest_path);
  s.seed = require<std::uint64_t>(manifest, "seed", manifest_path);
  s.thermal_fps = require<double>(manifest, "thermal_fps", manifest_path);
  s.eda_rate_hz = require<double>(manifest, "eda_rate_hz", manifest_path);
  s.height = require<int>(manifest, "height", manifest_path);
  s.width = require<int>(manifest, "width", manifest_path);
  const auto frame_count = require<std::size_t>(manifest, "frame_count", manifest_path);
  const auto eda_count = require<std::size_t>(manifest, "eda_count", manifest_path);
  for (const auto& seg : require<ordered_json>(manifest, "task_schedule", manifest_path)) {
    s.task_schedule.push_back(TaskSegment{require<std::string>(seg, "name", manifest_path),
                                          require<int>(seg, "label", manifest_path),
                                          require<double>(seg, "start_s", manifest_path),
                                          require<double>(seg, "end_s", manifest_path)});
  }
  auto files = require<ordered_json>(manifest, "files", manifest_path);

  auto check_grid = [&](const GridFileHeader& h, const std::string& name) {
    if (h.count != frame_count) {
      throw IoError("'" + name + "': length inconsistency: manifest declares " + std::to_string(frame_count) +
                    " frames, file holds " + std::to_string(h.count));
    }
    if (h.height != static_cast<std::uint32_t>(s.height) || h.width != static_cast<std::uint32_t>(s.width)) {
      throw IoError("'" + name + "': frame shape disagrees with manifest");
    }
  };
  GridFileHeader h;
  const auto frames_name = require<std::string>(files, "frames", manifest_path);
  s.frames = read_float_grids(directory / frames_name, h);
  check_grid(h, frames_name);
  const auto mask_name = require<std::string>(files, "mask", manifest_path);
  s.masks = read_byte_grids(directory / mask_name, h);
  check_grid(h, mask_name);
  const auto parts_name = require<std::string>(files, "parts", manifest_path);
  s.parts = read_byte_grids(directory / parts_name, h);
  check_grid(h, parts_name);

  const auto eda_name = require<std::string>(files, "eda", manifest_path);
  std::istringstream csv(read_file(directory / eda_name));
  std::string line;
  if (!std::getline(csv, line) || line != "time_s,value") {
    throw IoError("'" + eda_name + "': missing 'time_s,value' header");
  }
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("'" + eda_name + "': malformed row '" + line + "'");
    double value = 0.0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) throw IoError("'" + eda_name + "': bad value in row '" + line + "'");
    s.eda.push_back(value);
  }
  if (s.eda.size() != eda_count) {
    throw IoError("'" + eda_name + "': length inconsistency: manifest declares " + std::to_string(eda_count) +
                  " samples, file holds " + std::to_string(s.eda.size()));
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw IoError("'" + directory.string() + "': " + e.what());
  }
  return s;
}

}  // namespace thermaco
