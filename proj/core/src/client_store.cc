#include <fstream>

#include "fs_util.h"
#include "infl/bytes.h"
#include "infl/client.h"

namespace infl {

namespace fs = std::filesystem;

namespace {

constexpr int kStoreFormat = 1;

fs::path meta_path(const fs::path& dir) { return dir / "store.json"; }
fs::path features_path(const fs::path& dir) { return dir / "features.bin"; }
fs::path index_path(const fs::path& dir) { return dir / "items.jsonl"; }

ReviewState state_from_name(const std::string& name) {
  if (name == "unlabeled") return ReviewState::kUnlabeled;
  if (name == "suggested") return ReviewState::kSuggested;
  if (name == "reviewed") return ReviewState::kReviewed;
  throw Error(ErrorCode::kParse, "unknown item state '" + name + "'");
}

nlohmann::json binding_to_json(const StoreBinding& b) {
  return {{"task_id", b.task_id}, {"input_dim", b.input_dim}, {"num_classes", b.num_classes}};
}

StoreBinding binding_from_json(const nlohmann::json& j) {
  return {j.at("task_id").get<std::string>(), j.at("input_dim").get<std::size_t>(),
          j.at("num_classes").get<std::size_t>()};
}

std::uint64_t parse_id_number(const std::string& id) {
  constexpr std::string_view kPrefix = "item-";
  if (id.compare(0, kPrefix.size(), kPrefix) != 0) return 0;
  try {
    return std::stoull(id.substr(kPrefix.size()));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

std::string review_state_name(ReviewState state) {
  switch (state) {
    case ReviewState::kUnlabeled: return "unlabeled";
    case ReviewState::kSuggested: return "suggested";
    case ReviewState::kReviewed: return "reviewed";
  }
  return "unknown";
}

StoreBinding binding_for(const TaskConfig& task) {
  return {task.task_id, task.spec.input_dim, task.spec.num_classes()};
}

ClientStore ClientStore::open(const fs::path& dir, std::size_t capacity) {
  ClientStore store;
  store.dir_ = dir;
  store.capacity_ = capacity;
  fs::create_directories(dir);
  store.load();
  return store;
}

ClientStore ClientStore::in_memory(std::size_t capacity) {
  ClientStore store;
  store.capacity_ = capacity;
  return store;
}

void ClientStore::load() {
  const auto& dir = *dir_;
  if (fs::exists(meta_path(dir))) {
    const auto meta = nlohmann::json::parse(detail::read_text(meta_path(dir)), nullptr, false);
    if (meta.is_discarded() || meta.value("format", 0) != kStoreFormat) {
      throw Error(ErrorCode::kParse, meta_path(dir).string() + " is not a version 1 store");
    }
    if (meta.contains("binding") && !meta.at("binding").is_null()) {
      binding_ = binding_from_json(meta.at("binding"));
    }
  } else {
    write_meta();
  }

  std::vector<std::uint8_t> blob;
  if (fs::exists(features_path(dir))) blob = detail::read_file(features_path(dir));
  feature_bytes_ = blob.size();

  std::size_t torn = 0;
  const auto lines = detail::read_lines(index_path(dir), &torn);
  std::size_t good = 0;
  for (const auto& text : lines) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) break;
    try {
      const auto id = j.at("id").get<std::string>();
      const auto offset = j.at("offset").get<std::uint64_t>();
      const auto dim = j.at("dim").get<std::size_t>();
      if (offset + 4 * dim > blob.size()) {
        throw Error(ErrorCode::kIo, "item " + id + " points past the end of features.bin");
      }
      auto [it, inserted] = index_.try_emplace(id, items_.size());
      if (inserted) {
        ClientItem item;
        item.item_id = id;
        item.features = decode_f32_le(std::span(blob).subspan(offset, 4 * dim));
        items_.push_back(std::move(item));
        offsets_[id] = offset;
        next_id_ = std::max(next_id_, parse_id_number(id) + 1);
      }
      auto& item = items_[it->second];
      item.state = state_from_name(j.at("state").get<std::string>());
      item.label = j.value("label", std::size_t{0});
      item.confidence = j.value("confidence", 0.0);
      if (j.contains("source_ref") && !j.at("source_ref").is_null()) {
        item.source_ref = j.at("source_ref").get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, "items.jsonl line " + std::to_string(good + 1) + ": " +
                                         e.what());
    }
    ++good;
  }
  if (torn > 0 || good != lines.size()) compact();
}

void ClientStore::write_meta() {
  if (!dir_) return;
  nlohmann::json meta{{"format", kStoreFormat}, {"capacity", capacity_}};
  meta["binding"] = binding_ ? binding_to_json(*binding_) : nlohmann::json(nullptr);
  detail::write_text_atomic(meta_path(*dir_), meta.dump(2));
}

void ClientStore::persist(const std::vector<const ClientItem*>& changed) {
  if (!dir_ || changed.empty()) return;
  std::string text;
  for (const auto* item : changed) {
    nlohmann::json j{{"id", item->item_id},
                     {"offset", offsets_.at(item->item_id)},
                     {"dim", item->features.size()},
                     {"state", review_state_name(item->state)},
                     {"label", item->label},
                     {"confidence", item->confidence}};
    j["source_ref"] = item->source_ref ? nlohmann::json(*item->source_ref) : nlohmann::json();
    text += j.dump();
    text += '\n';
  }
  detail::append_text(index_path(*dir_), text);
}

void ClientStore::compact() {
  if (!dir_) return;
  std::vector<const ClientItem*> all;
  for (const auto& item : items_) all.push_back(&item);
  detail::write_text_atomic(index_path(*dir_), "");
  persist(all);
}

void ClientStore::bind(const StoreBinding& binding) {
  if (binding_ && *binding_ == binding) return;
  if (binding_ && !items_.empty()) {
    throw Error(ErrorCode::kSpecMismatch, "store holds items for task '" + binding_->task_id +
                                              "', cannot rebind to '" + binding.task_id + "'");
  }
  binding_ = binding;
  write_meta();
}

std::string ClientStore::ingest(std::vector<float> features, std::optional<std::string> source_ref) {
  if (!binding_) throw Error(ErrorCode::kSpecMismatch, "store is not bound to a task");
  if (features.size() != binding_->input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(binding_->input_dim) +
                                                   " features, got " +
                                                   std::to_string(features.size()));
  }
  if (!all_finite(features)) throw Error(ErrorCode::kNonFiniteValue, "features must be finite");
  if (items_.size() >= capacity_) {
    throw Error(ErrorCode::kStoreFull, "store holds its maximum of " + std::to_string(capacity_) +
                                           " items");
  }

  ClientItem item;
  item.item_id = "item-" + std::to_string(next_id_);
  item.features = std::move(features);
  item.source_ref = std::move(source_ref);

  std::uint64_t offset = feature_bytes_;
  if (dir_) offset = detail::append_bytes(features_path(*dir_), encode_f32_le(item.features));
  feature_bytes_ = offset + 4 * item.features.size();

  offsets_[item.item_id] = offset;
  index_[item.item_id] = items_.size();
  items_.push_back(std::move(item));
  ++next_id_;
  persist({&items_.back()});
  return items_.back().item_id;
}

std::size_t ClientStore::suggest_labels(const ModelSnapshot& snapshot) {
  if (!binding_) throw Error(ErrorCode::kSpecMismatch, "store is not bound to a task");
  if (snapshot.spec.input_dim != binding_->input_dim ||
      snapshot.spec.num_classes() != binding_->num_classes) {
    throw Error(ErrorCode::kSpecMismatch, "model shape does not match the store's task");
  }
  std::vector<const ClientItem*> changed;
  for (auto& item : items_) {
    if (item.state != ReviewState::kUnlabeled) continue;
    const auto prediction = predict_label(snapshot.params, snapshot.spec, item.features);
    item.state = ReviewState::kSuggested;
    item.label = prediction.label;
    item.confidence = prediction.confidence;
    changed.push_back(&item);
  }
  persist(changed);
  return changed.size();
}

ClientItem& ClientStore::mutable_item(const std::string& item_id) {
  auto it = index_.find(item_id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownItem, "no item '" + item_id + "'");
  return items_[it->second];
}

const ClientItem& ClientStore::item(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownItem, "no item '" + item_id + "'");
  return items_[it->second];
}

const ClientItem& ClientStore::review(const std::string& item_id, const ReviewDecision& decision) {
  auto& item = mutable_item(item_id);
  if (item.state == ReviewState::kReviewed) {
    throw Error(ErrorCode::kInvalidParameter, "item '" + item_id + "' is already reviewed");
  }
  std::size_t label = item.label;
  if (decision.label) {
    label = *decision.label;
    const std::size_t k = binding_ ? binding_->num_classes : 0;
    if (label >= k) {
      throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) +
                                                   " outside [0, " + std::to_string(k) + ")");
    }
  } else if (item.state != ReviewState::kSuggested) {
    throw Error(ErrorCode::kAcceptWithoutSuggestion,
                "item '" + item_id + "' has no suggestion to accept");
  }
  item.state = ReviewState::kReviewed;
  item.label = label;
  persist({&item});
  return item;
}

std::size_t ClientStore::count(ReviewState state) const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.state == state;
  return n;
}

Dataset ClientStore::reviewed_dataset() const {
  Dataset ds;
  for (const auto& item : items_) {
    if (item.state == ReviewState::kReviewed) ds.examples.push_back({item.features, item.label});
  }
  return ds;
}

std::vector<std::string> ClientStore::import_csv(const std::string& path, bool labels_are_reviewed) {
  if (!binding_) throw Error(ErrorCode::kSpecMismatch, "store is not bound to a task");
  const Dataset rows = read_dataset_csv_file(path, binding_->input_dim);
  if (items_.size() + rows.size() > capacity_) {
    throw Error(ErrorCode::kStoreFull, "importing " + std::to_string(rows.size()) +
                                           " rows would exceed capacity " +
                                           std::to_string(capacity_));
  }
  if (labels_are_reviewed) {
    for (const auto& ex : rows.examples) {
      if (ex.label >= binding_->num_classes) {
        throw Error(ErrorCode::kLabelOutOfRange, "CSV label " + std::to_string(ex.label));
      }
    }
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& ex = rows.examples[i];
    ids.push_back(ingest(ex.features, path + "#" + std::to_string(i + 1)));
    if (labels_are_reviewed) review(ids.back(), ReviewDecision::set(ex.label));
  }
  return ids;
}

}  // namespace infl
