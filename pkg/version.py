BUILD_TAG = "rncsim_1"
