export interface QueryPoint {
  section: string;
  x: number;
  y: number;
}

export interface DatasetInfo {
  id: string;
  sections: string[];
  layers: string[];
  height: number;
  width: number;
  feature: { rows: number; cols: number; channels: number; stride: number };
  default_sigma: number;
  components_max: number;
}

export interface QuerySectionResult {
  id: string;
  png: string; // base64 PNG heatmap at feature resolution
}

export interface QueryResponse {
  sections: QuerySectionResult[];
  sigma: number;
  components: number;
  stride: number;
}
